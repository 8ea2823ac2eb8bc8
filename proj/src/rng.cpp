#include "unlab/rng.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "unlab/errors.hpp"

namespace unlab {

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot hash missing file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return hash_hex(fnv1a(bytes.data(), bytes.size()));
}

}  // namespace unlab
