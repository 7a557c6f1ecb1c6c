#pragma once

#include <cstdint>

namespace dpp {

// Central-finite-difference verification of every analytic gradient in the
// library: the four loss terms, the encoder/decoder chain and the domain
// classifier. Each check runs `instances` random cases.
struct GradCheckReport {
  double max_rel_err_losses = 0.0;  // worst case over all loss checks
  double max_rel_err_model = 0.0;   // worst case over model/classifier chains
  int cases = 0;                    // total instances executed

  double overall() const {
    return max_rel_err_losses > max_rel_err_model ? max_rel_err_losses
                                                  : max_rel_err_model;
  }
};

GradCheckReport run_gradcheck(int instances, std::uint64_t seed);

}  // namespace dpp
