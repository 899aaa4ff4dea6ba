#include <cstdio>
#include <fstream>
#include <sstream>

#include "uatr/binary_io.hpp"
#include "uatr/digest.hpp"
#include "uatr/error.hpp"

namespace uatr {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::format: return "format error";
        case ErrorKind::unsupported: return "unsupported";
        case ErrorKind::empty_input: return "empty input";
        case ErrorKind::parameter: return "parameter error";
        case ErrorKind::size: return "size error";
        case ErrorKind::shape: return "shape error";
        case ErrorKind::label: return "label error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::perturbation: return "perturbation error";
        case ErrorKind::config: return "config error";
        case ErrorKind::io: return "io error";
    }
    return "error";
}

std::string hex_digest(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace uatr
