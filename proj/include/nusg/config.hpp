#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "nusg/train.hpp"

namespace nusg {

/// Invalid configuration; `key()` names the offending key (empty for
/// file-level problems).
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& message)
        : std::invalid_argument(message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Line-oriented "key = value"; '#' starts a comment; blank lines ignored.
/// Unknown or repeated keys are rejected. Relative paths resolve against
/// `base_dir`. The result is validated before it is returned.
TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace nusg
