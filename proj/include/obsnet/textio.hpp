#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace obsnet {

/// Parse failure in one of the text formats; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, int line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

/// Shortest decimal form that round-trips a double exactly.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace obsnet
