#pragma once

#include <stdexcept>
#include <string>

namespace capt {

// Error codes for failures that callers (and tests) need to tell apart.
enum class errc {
  invalid_argument,
  empty_prompt,
  frequency_above_nyquist,
  output_dir_not_empty,
  manifest_parse,
  manifest_missing_audio,
  score_out_of_range,
  waveform_too_short,
  non_finite_input,
  sequence_too_short,
  sequence_too_long,
  shape_mismatch,
  invalid_stage,
  wer_empty_reference,
  pcc_length_mismatch,
  pcc_too_short,
  pcc_zero_variance,
  too_few_valid_pairs,
  io_failure,
  checkpoint_format,
  config_invalid,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

inline void require(bool cond, errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace capt
