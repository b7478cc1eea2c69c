#pragma once

#include <stdexcept>
#include <string>

namespace sketchgen {

// A caller broke a documented precondition (bad shape, out-of-range value, ...).
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A run configuration is unusable: unknown key, bad value, missing prerequisite.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_key_error : config_error {
    std::string key;
    explicit config_key_error(std::string k)
        : config_error("unknown config key: " + k), key(std::move(k)) {}
};

// File-level failure. byte_offset points at the offending byte when known.
struct io_error : std::runtime_error {
    long long byte_offset;
    explicit io_error(const std::string& msg, long long offset = -1)
        : std::runtime_error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")"
                                         : msg),
          byte_offset(offset) {}
};

// Checkpoint deserialization failure (bad magic, version mismatch, truncation).
struct load_error : io_error {
    using io_error::io_error;
};

}  // namespace sketchgen
