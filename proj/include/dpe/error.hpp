#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpe {

enum class ErrorCode {
    duplicate_entry,
    empty_entry,
    missing_char_closure,
    vocab_too_small,
    unknown_char,
    too_many_segmentations,
    unsegmentable,
    non_finite_loss,
    alignment_mismatch,
    manifest_mismatch,
    config,
    format,
    io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Configuration problems map to exit code 2, everything else to 3.
bool is_config_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace dpe
