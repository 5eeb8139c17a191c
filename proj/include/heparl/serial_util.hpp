#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "heparl/errors.hpp"

namespace heparl::serial {

/// Doubles are stored as hexfloats so that serialized models reproduce
/// their predictions bit-exactly after a round trip.
inline void write_hex(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%a", v);
    out << buf;
}

inline std::string read_token(std::istream& in, const char* what) {
    std::string token;
    if (!(in >> token)) {
        throw ValidationError(std::string("truncated model file while reading ") + what);
    }
    return token;
}

inline double read_double(std::istream& in, const char* what) {
    std::string token = read_token(in, what);
    char* end = nullptr;
    double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
        throw ValidationError(std::string("malformed number in model file: ") + token);
    }
    return v;
}

inline long read_int(std::istream& in, const char* what) {
    std::string token = read_token(in, what);
    char* end = nullptr;
    long v = std::strtol(token.c_str(), &end, 10);
    if (end == token.c_str() || *end != '\0') {
        throw ValidationError(std::string("malformed integer in model file: ") + token);
    }
    return v;
}

inline void expect_token(std::istream& in, const char* expected) {
    if (read_token(in, expected) != expected) {
        throw ValidationError(std::string("malformed model file: expected ") + expected);
    }
}

} // namespace heparl::serial
