#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "c3d/error.hpp"

namespace c3d::cli {

/// Bad flags, bad config files or bad values: reported with exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

struct KeyInfo {
    std::string key;  // "group.name"
    std::string default_value;
    std::string help;
    std::string alias;  // optional extra flag name, e.g. "preset"
};

/// Every documented key, in display order.
[[nodiscard]] const std::vector<KeyInfo>& all_keys();
[[nodiscard]] const KeyInfo* find_key(std::string_view key);

/// Flat key = value settings. Precedence: set() (flags) > load_file() > defaults.
class Config {
public:
    /// groups: key prefixes this command reads, e.g. {"data", "net"}.
    explicit Config(std::vector<std::string> groups);

    /// '#' starts a comment; blank lines are skipped. Unknown keys and
    /// malformed lines raise UsageError naming the file and line.
    void load_file(const std::filesystem::path& path);
    void set(std::string_view key, std::string value);

    [[nodiscard]] const std::string& str(std::string_view key) const;
    [[nodiscard]] double num(std::string_view key) const;
    [[nodiscard]] std::size_t size(std::string_view key) const;
    [[nodiscard]] bool flag(std::string_view key) const;
    [[nodiscard]] std::vector<std::size_t> sizes(std::string_view key) const;

    [[nodiscard]] const std::vector<std::string>& groups() const noexcept { return groups_; }
    [[nodiscard]] bool uses(std::string_view key) const;

    /// Resolved values of the used groups, one "key = value" per line.
    [[nodiscard]] std::string dump() const;
    void write(const std::filesystem::path& path) const;

private:
    std::vector<std::string> groups_;
    std::map<std::string, std::string, std::less<>> file_;
    std::map<std::string, std::string, std::less<>> flags_;
};

[[nodiscard]] double parse_double(std::string_view text, std::string_view what);
[[nodiscard]] std::size_t parse_size(std::string_view text, std::string_view what);
[[nodiscard]] std::vector<std::string> split_list(std::string_view text);

}  // namespace c3d::cli
