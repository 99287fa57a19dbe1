#pragma once

#include <filesystem>
#include <string>

#include "trilite/model.hpp"

namespace trilite {

struct Checkpoint {
    HeadParams params;
    std::string metadata; // free-form, e.g. the training config echo
};

// Same conventions as the dataset container (little-endian, explicit
// endianness tag, 64-byte aligned records). Values are stored as 64-bit
// floats so parameters round-trip bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const HeadParams& params, const std::string& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "am,fg,bg" or "fg,bg".
std::string channel_order_tag(HeadMode mode);

} // namespace trilite
