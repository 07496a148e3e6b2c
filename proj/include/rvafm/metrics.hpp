#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rvafm {

/// Unit-cost insert/delete/substitute edit distance.
long levenshtein(std::string_view a, std::string_view b);

/// Edit distance over whitespace-separated tokens.
long token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Splits on runs of whitespace; punctuation stays attached to its token.
std::vector<std::string> whitespace_tokens(std::string_view text);

struct ErrorRates {
  double cer = 0.0;
  double wer = 0.0;
};

/// Corpus-level rates: sum of distances over sum of ground-truth lengths
/// (characters for CER, whitespace tokens for WER), not a mean of per-pair
/// ratios. Pairs are (truth, hypothesis).
ErrorRates corpus_error_rates(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace rvafm
