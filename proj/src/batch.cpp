// SPDX-License-Identifier: Apache-2.0
#include "alum/batch.hpp"

#include <string>

#include "alum/error.hpp"

namespace alum {

bool TokenBatch::has_mlm() const noexcept {
    for (auto t : mlm_targets) {
        if (t != kNotPredicted) {
            return true;
        }
    }
    return false;
}

std::vector<std::size_t> TokenBatch::masked_positions() const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < mlm_targets.size(); ++i) {
        if (mlm_targets[i] != kNotPredicted) {
            rows.push_back(i);
        }
    }
    return rows;
}

void TokenBatch::validate() const {
    const std::size_t n = tokens();
    auto check = [n](std::size_t got, const char* field, bool optional) {
        if (got != n && !(optional && got == 0)) {
            throw Error(ErrorKind::invalid_input, std::string("batch: ") + field + " has " + std::to_string(got) +
                                                      " entries, expected " + std::to_string(n));
        }
    };
    check(input_ids.size(), "input_ids", false);
    check(segment_ids.size(), "segment_ids", false);
    check(attention_mask.size(), "attention_mask", false);
    check(mlm_targets.size(), "mlm_targets", true);
    if (!nsp_labels.empty() && nsp_labels.size() != batch) {
        throw Error(ErrorKind::invalid_input, "batch: nsp_labels length differs from batch size");
    }
    if (!class_labels.empty() && class_labels.size() != batch) {
        throw Error(ErrorKind::invalid_input, "batch: class_labels length differs from batch size");
    }
}

} // namespace alum
