// SPDX-License-Identifier: Apache-2.0
//
// Small end-to-end run: generate channels for one bin on 8x8 arrays, evaluate
// both fingerprint methods with 5-fold cross-validation and print the
// misalignment probability per budget.

#include <iostream>

#include "imfp/experiment.hpp"

int main() {
  using namespace imfp;
  const auto c = load_config(std::nullopt, {"arrays.rsu.n_x=8", "arrays.rsu.n_y=8", "arrays.cv.n_x=8",
                                            "arrays.cv.n_y=8", "instances_per_bin=100", "evaluation.folds=5"});
  const World w = make_world(c);
  const auto data = generate_channels(c, c.traffic, c.bins.front(), c.instances_per_bin, 0);
  const auto ev = evaluate_cv(c, w, c.bins.front(), data, {{1, 2, 4, 8, 16, 32}, {{true, 0.0}}, {"avgpow", "minmisprob"}}, 0);
  fmt::print("n_b,avgpow_ppl1,minmisprob_ppl1\n");
  for (std::size_t b = 0; b < ev.n_b.size(); ++b) {
    fmt::print("{},{:.3f},{:.3f}\n", ev.n_b[b], estimate_ppl(ev.losses(0, 0, b), 1.0),
               estimate_ppl(ev.losses(0, 1, b), 1.0));
  }
}
