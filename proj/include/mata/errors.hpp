#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mata {

/// Root of every error raised by the library. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Softmax over a row where every entry is the mask sentinel.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class SpanError : public Error {
public:
    using Error::Error;
};

class SegmentationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed weight file. Carries the byte offset at which decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Malformed experiment/config text. Line 0 means the problem is not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& field,
               const std::string& what)
        : Error(format(file, line, field, what)), line_(line), field_(field) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    static std::string format(const std::string& file, std::size_t line,
                              const std::string& field, const std::string& what) {
        std::string out = file;
        if (line > 0) out += ":" + std::to_string(line);
        if (!field.empty()) out += ": field '" + field + "'";
        return out + ": " + what;
    }

    std::size_t line_;
    std::string field_;
};

}  // namespace mata
