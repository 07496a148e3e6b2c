#include "rvafm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <stdexcept>

namespace rvafm {

namespace {

// Two-row DP shared by the char and token variants.
template <typename Seq>
long edit_distance(const Seq& a, const Seq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0L);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const long subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

long levenshtein(std::string_view a, std::string_view b) { return edit_distance(a, b); }

long token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return edit_distance(a, b);
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

ErrorRates corpus_error_rates(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("corpus_error_rates: empty corpus");
  long char_dist = 0, char_len = 0;
  long token_dist = 0, token_len = 0;
  for (const auto& [truth, hyp] : pairs) {
    char_dist += levenshtein(hyp, truth);
    char_len += static_cast<long>(truth.size());
    const auto truth_tokens = whitespace_tokens(truth);
    token_dist += token_edit_distance(whitespace_tokens(hyp), truth_tokens);
    token_len += static_cast<long>(truth_tokens.size());
  }
  if (char_len == 0)
    throw std::invalid_argument("corpus_error_rates: total ground-truth length is zero");
  ErrorRates rates;
  rates.cer = static_cast<double>(char_dist) / static_cast<double>(char_len);
  rates.wer = token_len == 0 ? 0.0
                             : static_cast<double>(token_dist) / static_cast<double>(token_len);
  return rates;
}

}  // namespace rvafm
