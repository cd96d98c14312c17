#ifndef D2G_CORE_ERRORS_HPP
#define D2G_CORE_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace d2g {

// invalid-argument errors use std::invalid_argument directly

struct CorruptShardError : std::runtime_error {
    explicit CorruptShardError(const std::string& m) : std::runtime_error(m) {}
};

struct ConfigError : std::runtime_error {
    std::vector<std::string> violations;
    explicit ConfigError(std::vector<std::string> v)
        : std::runtime_error(join(v)), violations(std::move(v)) {}

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "config error:";
        for (const auto& x : v) s += "\n  " + x;
        return s;
    }
};

struct DependencyError : std::runtime_error {
    std::string missing_path;
    DependencyError(const std::string& what, std::string path)
        : std::runtime_error(what + ": " + path), missing_path(std::move(path)) {}
};

struct InvalidStateError : std::runtime_error {
    explicit InvalidStateError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace d2g

#endif
