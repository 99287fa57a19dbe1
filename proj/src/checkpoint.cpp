#include "trilite/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <vector>

#include "trilite/binary_io.hpp"
#include "trilite/error.hpp"

namespace trilite {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kAlign = 64;

struct NamedTensor {
    const char* name;
    std::vector<std::size_t> shape;
    std::span<const double> values;
};

std::vector<NamedTensor> tensors_of(const HeadParams& p) {
    const std::size_t k = p.bn.channels();
    return {
        {"conv_kernel", p.conv_kernel.shape(), p.conv_kernel.data()},
        {"conv_bias", p.conv_bias.shape(), p.conv_bias.data()},
        {"bn_gamma", {k}, p.bn.gamma},
        {"bn_beta", {k}, p.bn.beta},
        {"bn_running_mean", {k}, p.bn.running_mean},
        {"bn_running_var", {k}, p.bn.running_var},
        {"region_weight", p.region_weight.shape(), p.region_weight.data()},
        {"region_bias", p.region_bias.shape(), p.region_bias.data()},
        {"token_weight", p.token_weight.shape(), p.token_weight.data()},
        {"token_bias", p.token_bias.shape(), p.token_bias.data()},
    };
}

} // namespace

std::string channel_order_tag(HeadMode mode) { return mode == HeadMode::binary ? "fg,bg" : "am,fg,bg"; }

void save_checkpoint(const std::filesystem::path& path, const HeadParams& p, const std::string& metadata) {
    const auto& c = p.config;
    io::ByteWriter w;
    w.raw(std::string_view(kMagic, 8));
    w.u32(kVersion);
    w.u32(io::kEndianTag);
    w.u32(c.mode == HeadMode::binary ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(c.kernel_size));
    w.u32(static_cast<std::uint32_t>(c.feature_dim));
    w.u32(static_cast<std::uint32_t>(c.token_dim));
    w.u32(static_cast<std::uint32_t>(c.classes));
    w.u32(static_cast<std::uint32_t>(c.channels()));
    w.u64(p.trainable_count());
    w.f64(p.bn.momentum);
    w.f64(p.bn.eps);
    const auto tag = channel_order_tag(c.mode);
    w.u32(static_cast<std::uint32_t>(tag.size()));
    w.raw(tag);
    w.u32(static_cast<std::uint32_t>(metadata.size()));
    w.raw(metadata);
    const auto tensors = tensors_of(p);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    w.pad_to(kAlign);
    for (const auto& t : tensors) {
        const std::string_view name(t.name);
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u64(d);
        for (double v : t.values) w.f64(v);
        w.pad_to(kAlign);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
    if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    io::ByteReader r(bytes.data(), bytes.size());

    if (bytes.size() < 8 || r.str(8) != std::string_view(kMagic, 8)) throw FormatError("bad magic, not a checkpoint", 0);
    if (const auto v = r.u32(); v != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(v), 8);
    if (r.u32() != io::kEndianTag) throw FormatError("endianness tag mismatch", 12);
    HeadConfig c;
    const auto mode_at = r.offset();
    const auto mode = r.u32();
    if (mode > 1) throw FormatError("unknown head mode", mode_at);
    c.mode = mode == 0 ? HeadMode::binary : HeadMode::three_channel;
    c.kernel_size = r.u32();
    c.feature_dim = r.u32();
    c.token_dim = r.u32();
    c.classes = r.u32();
    if (r.u32() != c.channels()) throw FormatError("channel count disagrees with head mode", 36);
    const auto count = r.u64();

    Checkpoint ck;
    try {
        ck.params = HeadParams::zeros(c);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid head configuration: ") + e.what(), 16);
    }
    if (count != ck.params.trainable_count()) throw FormatError("trainable parameter count mismatch", 40);
    ck.params.bn.momentum = r.f64();
    ck.params.bn.eps = r.f64();
    const auto tag_at = r.offset();
    const auto tag_len = r.u32();
    if (r.str(tag_len) != channel_order_tag(c.mode)) throw FormatError("channel order tag mismatch", tag_at);
    const auto meta_len = r.u32();
    ck.metadata = r.str(meta_len);
    const auto n_tensors = r.u32();

    auto& p = ck.params;
    struct Slot {
        const char* name;
        std::vector<std::size_t> shape;
        std::span<double> dst;
    };
    const std::size_t k = c.channels();
    std::vector<Slot> slots{
        {"conv_kernel", p.conv_kernel.shape(), p.conv_kernel.data()},
        {"conv_bias", p.conv_bias.shape(), p.conv_bias.data()},
        {"bn_gamma", {k}, p.bn.gamma},
        {"bn_beta", {k}, p.bn.beta},
        {"bn_running_mean", {k}, p.bn.running_mean},
        {"bn_running_var", {k}, p.bn.running_var},
        {"region_weight", p.region_weight.shape(), p.region_weight.data()},
        {"region_bias", p.region_bias.shape(), p.region_bias.data()},
        {"token_weight", p.token_weight.shape(), p.token_weight.data()},
        {"token_bias", p.token_bias.shape(), p.token_bias.data()},
    };
    if (n_tensors != slots.size()) throw FormatError("unexpected tensor count " + std::to_string(n_tensors), r.offset());
    for (const auto& slot : slots) {
        r.skip(io::align_up(r.position(), kAlign) - r.position());
        const auto at = r.offset();
        const auto name_len = r.u32();
        if (r.str(name_len) != slot.name) throw FormatError(std::string("expected tensor ") + slot.name, at);
        const auto rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u64();
        if (shape != slot.shape)
            throw FormatError(std::string("tensor ") + slot.name + " has shape " + shape_string(shape) + ", expected " +
                                  shape_string(slot.shape),
                              at);
        for (auto& v : slot.dst) v = r.f64();
    }
    r.skip(io::align_up(r.position(), kAlign) - r.position());
    if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
    for (double v : p.bn.running_var)
        if (v < 0.0) throw FormatError("negative running variance", 0);
    return ck;
}

} // namespace trilite
