#include "dpe/error.hpp"

namespace dpe {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::duplicate_entry: return "DuplicateEntry";
        case ErrorCode::empty_entry: return "EmptyEntry";
        case ErrorCode::missing_char_closure: return "MissingCharClosure";
        case ErrorCode::vocab_too_small: return "VocabTooSmall";
        case ErrorCode::unknown_char: return "UnknownChar";
        case ErrorCode::too_many_segmentations: return "TooManySegmentations";
        case ErrorCode::unsegmentable: return "Unsegmentable";
        case ErrorCode::non_finite_loss: return "NonFiniteLoss";
        case ErrorCode::alignment_mismatch: return "AlignmentMismatch";
        case ErrorCode::manifest_mismatch: return "ManifestMismatch";
        case ErrorCode::config: return "ConfigError";
        case ErrorCode::format: return "FormatError";
        case ErrorCode::io: return "IoError";
    }
    return "Error";
}

bool is_config_error(ErrorCode code) noexcept {
    return code == ErrorCode::config;
}

}  // namespace dpe
