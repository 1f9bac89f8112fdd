// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace alum {

/// Sentinel in mlm_targets for positions that carry no prediction target.
inline constexpr std::int32_t kNotPredicted = -1;

/// Padded, row-major [batch, seq_len] token block plus whatever supervision
/// the batch carries. Empty label vectors mean "not supervised for that head".
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> segment_ids;
    std::vector<std::uint8_t> attention_mask;
    std::vector<std::int32_t> mlm_targets;
    std::vector<std::int32_t> nsp_labels;
    std::vector<std::int32_t> class_labels;

    std::size_t tokens() const noexcept { return batch * seq_len; }
    bool has_mlm() const noexcept;
    /// Flat [batch*seq_len] indices of positions with an MLM target, ascending.
    std::vector<std::size_t> masked_positions() const;
    /// Throws Error(invalid_input) if field lengths disagree with batch x seq_len.
    void validate() const;
};

} // namespace alum
