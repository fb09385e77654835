#pragma once

#include <string>

#include "hpun/image.hpp"

namespace hpun {

// 8-bit PNG I/O. Reads expand palette/gray/alpha to plain 8-bit RGB (or keep
// a single gray channel when gray=true is requested at write time). Writes
// are atomic (temp file + rename) and quantize to 8 bits.
ImageBuf read_png(const std::string& path);
void write_png(const std::string& path, const ImageBuf& img);

}  // namespace hpun
