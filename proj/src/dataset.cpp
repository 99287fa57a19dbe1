#include "trilite/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trilite/binary_io.hpp"
#include "trilite/error.hpp"

namespace trilite {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'L', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFlagBbox = 1u;
constexpr std::uint32_t kFlagMask = 2u;

std::size_t feature_count(const DatasetHeader& h) { return h.feature_dim * h.grid_h * h.grid_w; }

std::size_t raw_block_bytes(const DatasetHeader& h, std::size_t bbox_count) {
    return 8 + 4 * feature_count(h) + 4 * h.token_dim + 16 * bbox_count + (h.has_mask ? h.image_h * h.image_w : 0);
}

std::size_t data_start(const DatasetHeader& h) { return io::align_up(kHeaderBytes + h.metadata.size(), kBlockAlign); }

void check_header_dims(const DatasetHeader& h, std::uint64_t offset) {
    auto require = [&](bool ok, const std::string& what) {
        if (!ok) throw FormatError("invalid dataset header: " + what, offset);
    };
    require(h.feature_dim > 0 && h.token_dim > 0, "feature and token dimensions must be positive");
    require(h.grid_w > 0 && h.grid_h > 0, "grid must be non-empty");
    require(h.classes > 0, "class count must be positive");
    require(h.image_w > 0 && h.image_h > 0, "image size must be positive");
    require(h.feature_dim < (1u << 24) && h.token_dim < (1u << 24) && h.grid_w < 4096 && h.grid_h < 4096 &&
                h.image_w < 65536 && h.image_h < 65536,
            "dimension out of supported range");
}

} // namespace

void validate_sample(const DatasetHeader& h, const FeatureSample& s) {
    const std::vector<std::size_t> fshape{h.feature_dim, h.grid_h, h.grid_w};
    if (s.patch_features.shape() != fshape)
        throw DataError("patch features " + shape_string(s.patch_features.shape()) + ", expected " + shape_string(fshape));
    if (s.class_token.size() != h.token_dim || s.class_token.rank() != 1)
        throw DataError("class token " + shape_string(s.class_token.shape()) + ", expected [" +
                        std::to_string(h.token_dim) + "]");
    if (s.label >= h.classes)
        throw DataError("label " + std::to_string(s.label) + " out of range for " + std::to_string(h.classes) + " classes");
    if (h.has_bbox && s.bbox_gt.empty()) throw DataError("dataset declares boxes but a sample has none");
    if (!h.has_bbox && !s.bbox_gt.empty()) throw DataError("sample carries boxes but the dataset declares none");
    for (const auto& b : s.bbox_gt)
        if (!b.within(static_cast<std::int64_t>(h.image_w), static_cast<std::int64_t>(h.image_h)))
            throw DataError("bbox (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
                            "," + std::to_string(b.y1) + ") outside the " + std::to_string(h.image_w) + "x" +
                            std::to_string(h.image_h) + " image");
    if (h.has_mask != s.mask_gt.has_value()) throw DataError("mask presence does not match the dataset header");
    if (s.mask_gt) {
        if (s.mask_gt->size() != h.image_h * h.image_w) throw DataError("mask_gt size does not match image size");
        for (auto v : *s.mask_gt)
            if (v > 1) throw DataError("mask_gt must be binary");
    }
}

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header_in,
                   std::span<const FeatureSample> samples) {
    DatasetHeader h = header_in;
    h.sample_count = samples.size();
    check_header_dims(h, 0);
    for (const auto& s : samples) validate_sample(h, s);

    std::vector<std::uint64_t> offsets;
    std::uint64_t at = data_start(h);
    for (const auto& s : samples) {
        offsets.push_back(at);
        at += io::align_up(raw_block_bytes(h, s.bbox_gt.size()), kBlockAlign);
    }
    const std::uint64_t index_offset = at;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    auto flush = [&](io::ByteWriter& w) {
        out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
        w.bytes().clear();
    };

    io::ByteWriter w;
    w.raw(std::string_view(kMagic, 8));
    w.u32(h.version);
    w.u32(io::kEndianTag);
    w.u32(static_cast<std::uint32_t>(h.feature_dim));
    w.u32(static_cast<std::uint32_t>(h.token_dim));
    w.u32(static_cast<std::uint32_t>(h.grid_w));
    w.u32(static_cast<std::uint32_t>(h.grid_h));
    w.u32(static_cast<std::uint32_t>(h.classes));
    w.u32(static_cast<std::uint32_t>(h.image_h));
    w.u32(static_cast<std::uint32_t>(h.image_w));
    w.u32(static_cast<std::uint32_t>(h.patch_size));
    w.u32((h.has_bbox ? kFlagBbox : 0u) | (h.has_mask ? kFlagMask : 0u));
    w.u32(static_cast<std::uint32_t>(h.metadata.size()));
    w.u64(h.sample_count);
    w.u64(index_offset);
    w.zeros(kHeaderBytes - w.size());
    w.raw(h.metadata);
    w.pad_to(kBlockAlign);
    flush(w);

    for (const auto& s : samples) {
        w.u32(static_cast<std::uint32_t>(s.label));
        w.u32(static_cast<std::uint32_t>(s.bbox_gt.size()));
        for (double v : s.patch_features.data()) w.f32(static_cast<float>(v));
        for (double v : s.class_token.data()) w.f32(static_cast<float>(v));
        for (const auto& b : s.bbox_gt) {
            w.u32(static_cast<std::uint32_t>(b.x0));
            w.u32(static_cast<std::uint32_t>(b.y0));
            w.u32(static_cast<std::uint32_t>(b.x1));
            w.u32(static_cast<std::uint32_t>(b.y1));
        }
        if (s.mask_gt) w.bytes().insert(w.bytes().end(), s.mask_gt->begin(), s.mask_gt->end());
        w.pad_to(kBlockAlign);
        flush(w);
    }
    for (auto o : offsets) w.u64(o);
    flush(w);
    if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : path_(path), stream_(path, std::ios::binary) {
    if (!stream_) throw ConfigError("cannot open dataset '" + path.string() + "'");
    stream_.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::uint64_t>(stream_.tellg());
    stream_.seekg(0);

    std::vector<std::uint8_t> head(kHeaderBytes);
    if (file_size < kHeaderBytes) throw FormatError("file shorter than the 128-byte header", file_size);
    stream_.read(reinterpret_cast<char*>(head.data()), kHeaderBytes);

    io::ByteReader r(head.data(), head.size());
    if (r.str(8) != std::string_view(kMagic, 8)) throw FormatError("bad magic, not a feature dataset", 0);
    header_.version = r.u32();
    if (header_.version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(header_.version), 8);
    if (r.u32() != io::kEndianTag) throw FormatError("endianness tag mismatch", 12);
    header_.feature_dim = r.u32();
    header_.token_dim = r.u32();
    header_.grid_w = r.u32();
    header_.grid_h = r.u32();
    header_.classes = r.u32();
    header_.image_h = r.u32();
    header_.image_w = r.u32();
    header_.patch_size = r.u32();
    const std::uint32_t flags = r.u32();
    if (flags & ~(kFlagBbox | kFlagMask)) throw FormatError("unknown annotation flags", 48);
    header_.has_bbox = flags & kFlagBbox;
    header_.has_mask = flags & kFlagMask;
    const std::uint32_t meta_len = r.u32();
    header_.sample_count = r.u64();
    index_offset_ = r.u64();
    check_header_dims(header_, 16);

    if (kHeaderBytes + static_cast<std::uint64_t>(meta_len) > file_size)
        throw FormatError("metadata runs past end of file", kHeaderBytes);
    header_.metadata.resize(meta_len);
    stream_.read(header_.metadata.data(), meta_len);

    const std::uint64_t start = data_start(header_);
    if (index_offset_ < start || index_offset_ % kBlockAlign != 0)
        throw FormatError("index offset " + std::to_string(index_offset_) + " is misplaced", 64);
    if (header_.sample_count > (file_size - index_offset_) / 8 ||
        index_offset_ + 8 * header_.sample_count != file_size)
        throw FormatError("file length " + std::to_string(file_size) + " inconsistent with " +
                              std::to_string(header_.sample_count) + " samples and index at " +
                              std::to_string(index_offset_),
                          index_offset_);

    std::vector<std::uint8_t> index(8 * header_.sample_count);
    stream_.seekg(static_cast<std::streamoff>(index_offset_));
    stream_.read(reinterpret_cast<char*>(index.data()), static_cast<std::streamsize>(index.size()));
    if (!stream_) throw FormatError("truncated sample index", index_offset_);
    io::ByteReader ir(index.data(), index.size(), index_offset_);
    offsets_.resize(header_.sample_count);
    const std::uint64_t min_block = io::align_up(raw_block_bytes(header_, header_.has_bbox ? 1 : 0), kBlockAlign);
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
        const auto at = ir.offset();
        offsets_[i] = ir.u64();
        if (offsets_[i] % kBlockAlign != 0 || offsets_[i] < (i ? offsets_[i - 1] + min_block : start))
            throw FormatError("sample " + std::to_string(i) + " offset " + std::to_string(offsets_[i]) + " is invalid",
                              at);
    }
    if (!offsets_.empty() && offsets_.back() + min_block > index_offset_)
        throw FormatError("last sample block overlaps the index", offsets_.back());
}

FeatureSample DatasetReader::sample(std::size_t index) const {
    if (index >= offsets_.size())
        throw DataError("sample index " + std::to_string(index) + " out of range (" + std::to_string(offsets_.size()) +
                        " samples)");
    const std::uint64_t begin = offsets_[index];
    const std::uint64_t end = index + 1 < offsets_.size() ? offsets_[index + 1] : index_offset_;
    std::vector<std::uint8_t> block(end - begin);
    {
        std::lock_guard lock(mutex_);
        stream_.clear();
        stream_.seekg(static_cast<std::streamoff>(begin));
        stream_.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()));
        if (!stream_) throw FormatError("truncated sample block", begin);
    }

    const auto& h = header_;
    io::ByteReader r(block.data(), block.size(), begin);
    FeatureSample s;
    s.label = r.u32();
    if (s.label >= h.classes) throw FormatError("label " + std::to_string(s.label) + " out of range", begin);
    const std::uint32_t nbox = r.u32();
    if (h.has_bbox != (nbox > 0)) throw FormatError("bbox count disagrees with the header flags", begin + 4);
    if (io::align_up(raw_block_bytes(h, nbox), kBlockAlign) != block.size())
        throw FormatError("sample block is " + std::to_string(block.size()) + " bytes, expected " +
                              std::to_string(io::align_up(raw_block_bytes(h, nbox), kBlockAlign)),
                          begin);
    s.patch_features = Tensor({h.feature_dim, h.grid_h, h.grid_w});
    for (auto& v : s.patch_features.data()) v = r.f32();
    s.class_token = Tensor({h.token_dim});
    for (auto& v : s.class_token.data()) v = r.f32();
    for (std::uint32_t i = 0; i < nbox; ++i) {
        const auto at = r.offset();
        Box b;
        b.x0 = r.u32();
        b.y0 = r.u32();
        b.x1 = r.u32();
        b.y1 = r.u32();
        if (!b.within(static_cast<std::int64_t>(h.image_w), static_cast<std::int64_t>(h.image_h)))
            throw FormatError("bbox outside image bounds", at);
        s.bbox_gt.push_back(b);
    }
    if (h.has_mask) {
        const auto at = r.offset();
        std::vector<std::uint8_t> mask(h.image_h * h.image_w);
        for (auto& m : mask) m = r.u8();
        if (std::any_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v > 1; }))
            throw FormatError("mask_gt contains non-binary values", at);
        s.mask_gt = std::move(mask);
    }
    check_finite(s.patch_features.data(), "stored patch features");
    check_finite(s.class_token.data(), "stored class token");
    return s;
}

Dataset read_dataset(const std::filesystem::path& path) {
    DatasetReader reader(path);
    Dataset d{reader.header(), {}};
    d.samples.reserve(reader.size());
    for (std::size_t i = 0; i < reader.size(); ++i) d.samples.push_back(reader.sample(i));
    return d;
}

void round_to_storage_precision(FeatureSample& sample) {
    for (auto& v : sample.patch_features.data()) v = static_cast<double>(static_cast<float>(v));
    for (auto& v : sample.class_token.data()) v = static_cast<double>(static_cast<float>(v));
}

} // namespace trilite
