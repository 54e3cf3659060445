#pragma once

// Attention masks for the joint reference+target sequence.
//
// Sequence layout everywhere: reference tokens occupy rows/columns
// [0, n_ref), target tokens [n_ref, n_ref + n_tgt). Rows are queries.

#include <memory>
#include <string>

#include "reftok/autodiff.hpp"
#include "reftok/errors.hpp"

namespace reftok {

enum class MaskMode {
    oneway,    // reference rows see only reference columns; target rows see all
    ref_only,  // additionally, each target row sees only references plus itself
    none,      // full bidirectional attention
};

inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "oneway") return MaskMode::oneway;
    if (s == "ref_only") return MaskMode::ref_only;
    if (s == "none") return MaskMode::none;
    throw ConfigError("unknown mask mode: " + s + " (expected oneway, ref_only, or none)");
}

inline std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::oneway: return "oneway";
        case MaskMode::ref_only: return "ref_only";
        case MaskMode::none: return "none";
    }
    return "?";
}

// Masked positions carry probability exactly zero in the softmax, so with
// oneway/ref_only the reference rows are bit-for-bit independent of targets.
inline std::shared_ptr<ad::BoolMat> build_reference_attention_mask(int n_ref, int n_tgt, MaskMode mode) {
    if (n_ref < 1 || n_tgt < 0) throw std::logic_error("attention mask: need n_ref >= 1, n_tgt >= 0");
    const int n = n_ref + n_tgt;
    auto mask = std::make_shared<ad::BoolMat>(n, n);
    mask->setConstant(1);
    if (mode == MaskMode::none) return mask;
    // Barrier: no reference row attends to any target column.
    for (int i = 0; i < n_ref; ++i)
        for (int j = n_ref; j < n; ++j) (*mask)(i, j) = 0;
    if (mode == MaskMode::ref_only) {
        for (int i = n_ref; i < n; ++i)
            for (int j = n_ref; j < n; ++j) (*mask)(i, j) = (i == j) ? 1 : 0;
    }
    return mask;
}

}  // namespace reftok
