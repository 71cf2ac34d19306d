// SPDX-License-Identifier: Apache-2.0
#include "iclvc/icl.hpp"

#include <cmath>
#include <string>

namespace iclvc {

int MaskPolicy::min_unmasked_frames() const {
  return static_cast<int>(std::lround(min_unmasked_seconds * frame_rate));
}

int MaskPolicy::max_unmasked_frames() const {
  return static_cast<int>(std::lround(max_unmasked_seconds * frame_rate));
}

MaskSpec sample_training_mask(int num_frames, const MaskPolicy& policy, Rng& rng) {
  if (num_frames < 2) {
    throw std::invalid_argument("sample_training_mask: need at least 2 frames, got " + std::to_string(num_frames));
  }
  const int lo = policy.min_unmasked_frames();
  const int hi = policy.max_unmasked_frames();
  if (lo < 1 || hi < lo) throw std::invalid_argument("sample_training_mask: bad unmasked window");

  int length;
  if (num_frames <= lo) {
    length = num_frames / 2;
  } else {
    std::uniform_int_distribution<int> pick(lo, std::min(hi, num_frames - 1));
    length = pick(rng);
  }
  std::uniform_int_distribution<int> place(0, num_frames - length);
  const int start = place(rng);

  MaskSpec mask = MaskSpec::filled(static_cast<std::size_t>(num_frames), true);
  for (int i = start; i < start + length; ++i) mask.flags[static_cast<std::size_t>(i)] = false;
  return mask;
}

Matrix apply_mask(const Matrix& mel, const MaskSpec& mask, Rng& rng) {
  if (mask.size() != static_cast<std::size_t>(mel.rows())) {
    throw ShapeError("apply_mask: mask length " + std::to_string(mask.size()) + " != frames " +
                     std::to_string(mel.rows()));
  }
  Matrix out = mel;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = normal(rng);
  }
  return out;
}

InferencePrompt build_inference_prompt(const Matrix& ref_mel, const Matrix& ref_s, const Matrix& src_s,
                                       const Matrix* ref_p, const Matrix* src_p, Rng& rng) {
  if (ref_mel.rows() == 0) throw std::invalid_argument("build_inference_prompt: empty reference prompt");
  if (src_s.rows() == 0) throw std::invalid_argument("build_inference_prompt: empty source");
  if (ref_s.rows() != ref_mel.rows()) {
    throw ShapeError("build_inference_prompt: reference semantic rows " + std::to_string(ref_s.rows()) +
                     " != reference mel rows " + std::to_string(ref_mel.rows()));
  }
  if (ref_s.cols() != src_s.cols()) {
    throw ShapeError("build_inference_prompt: semantic dims differ (" + std::to_string(ref_s.cols()) +
                     " vs " + std::to_string(src_s.cols()) + ")");
  }
  if ((ref_p == nullptr) != (src_p == nullptr)) {
    throw std::invalid_argument("build_inference_prompt: prosody must be given for both reference and source or neither");
  }

  const Eigen::Index tr = ref_mel.rows();
  const Eigen::Index ts = src_s.rows();
  InferencePrompt p;
  p.reference_frames = tr;
  p.s_concat.resize(tr + ts, ref_s.cols());
  p.s_concat.topRows(tr) = ref_s;
  p.s_concat.bottomRows(ts) = src_s;

  p.mask = MaskSpec::filled(static_cast<std::size_t>(tr + ts), true);
  for (Eigen::Index i = 0; i < tr; ++i) p.mask.flags[static_cast<std::size_t>(i)] = false;
  Matrix m(tr + ts, ref_mel.cols());
  m.topRows(tr) = ref_mel;
  m.bottomRows(ts).setZero();
  p.m_init = apply_mask(m, p.mask, rng);

  if (ref_p) {
    if (ref_p->rows() != tr || src_p->rows() != ts || ref_p->cols() != src_p->cols()) {
      throw ShapeError("build_inference_prompt: prosody shapes " + shape_of(*ref_p) + " / " + shape_of(*src_p) +
                       " do not align with the prompt");
    }
    Matrix pc(tr + ts, ref_p->cols());
    pc.topRows(tr) = *ref_p;
    pc.bottomRows(ts) = *src_p;
    p.p_concat = std::move(pc);
  }
  return p;
}

Matrix extract_generated(const InferencePrompt& prompt, const Matrix& integrated) {
  if (integrated.rows() != prompt.m_init.rows()) {
    throw ShapeError("extract_generated: integrated rows " + std::to_string(integrated.rows()) +
                     " != prompt rows " + std::to_string(prompt.m_init.rows()));
  }
  return integrated.bottomRows(prompt.source_frames());
}

}  // namespace iclvc
