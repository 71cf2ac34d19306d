// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "iclvc/mask.hpp"
#include "iclvc/tensor.hpp"

namespace iclvc {

struct MaskPolicy {
  double frame_rate = 50.0;
  double min_unmasked_seconds = 2.0;
  double max_unmasked_seconds = 3.0;

  int min_unmasked_frames() const;
  int max_unmasked_frames() const;
};

// One contiguous unmasked window, length uniform over the integer frame counts
// in [min, max] seconds and placed uniformly; every other frame is masked.
// Utterances no longer than the minimum window keep half their frames
// unmasked instead.
MaskSpec sample_training_mask(int num_frames, const MaskPolicy& policy, Rng& rng);

// Masked rows become standard-normal noise; unmasked rows are copied as is.
Matrix apply_mask(const Matrix& mel, const MaskSpec& mask, Rng& rng);

struct InferencePrompt {
  Matrix s_concat;               // [S_ref ; S_src]
  Matrix m_init;                 // [M_ref ; noise]
  MaskSpec mask;                 // false on reference rows, true on source rows
  std::optional<Matrix> p_concat;
  Eigen::Index reference_frames = 0;

  Eigen::Index source_frames() const { return m_init.rows() - reference_frames; }
};

InferencePrompt build_inference_prompt(const Matrix& ref_mel, const Matrix& ref_s, const Matrix& src_s,
                                       const Matrix* ref_p, const Matrix* src_p, Rng& rng);

// The generated source span: the last source_frames() rows of the integrated state.
Matrix extract_generated(const InferencePrompt& prompt, const Matrix& integrated);

}  // namespace iclvc
