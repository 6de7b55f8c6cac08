#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "stoflin/system.hpp"

namespace stoflin {

struct SysFileError : std::runtime_error {
    int line;
    SysFileError(const std::string& msg, int line_)
        : std::runtime_error(msg + " (line " + std::to_string(line_) + ")"), line(line_) {}
};

/// Parsed system-definition document: the triplet plus the optional
/// [transform] and [feedback] sections.
struct SystemFile {
    StochasticSystem system;
    std::optional<Diffeo> transform;
    std::optional<Feedback> feedback;
};

SystemFile read_system_text(const std::string& text);
SystemFile read_system_file(const std::string& path);

std::string write_system_text(const SystemFile& doc);
void write_system_file(const std::string& path, const SystemFile& doc);

}  // namespace stoflin
