// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace iclvc {

// Per-frame flags; true = masked, i.e. a generation / reconstruction target.
struct MaskSpec {
  std::vector<bool> flags;

  static MaskSpec filled(std::size_t frames, bool value) { return {std::vector<bool>(frames, value)}; }

  std::size_t size() const { return flags.size(); }
  bool operator[](std::size_t i) const { return flags[i]; }
  std::size_t count_masked() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  }
  std::size_t count_unmasked() const { return size() - count_masked(); }
};

}  // namespace iclvc
