#include "adadec/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace adadec {

double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::vector<std::string> normalize_for_scoring(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (t == "</s>") break;
    if (t == "<pad>" || t == "<s>") continue;
    std::string lower = t;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(lower));
  }
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PRF make_prf(double overlap, double cand_total, double ref_total) {
  PRF s;
  if (cand_total == 0.0 || ref_total == 0.0) return s;
  s.precision = overlap / cand_total;
  s.recall = overlap / ref_total;
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

std::size_t ngram_total(std::size_t length, std::size_t n) { return length >= n ? length - n + 1 : 0; }

}  // namespace

PRF rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rouge_n: n must be >= 1");
  auto c = normalize_for_scoring(candidate);
  auto r = normalize_for_scoring(reference);
  const double overlap = static_cast<double>(clipped_overlap(ngrams(c, n), ngrams(r, n)));
  return make_prf(overlap, static_cast<double>(ngram_total(c.size(), n)),
                  static_cast<double>(ngram_total(r.size(), n)));
}

PRF rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  auto c = normalize_for_scoring(candidate);
  auto r = normalize_for_scoring(reference);
  return make_prf(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()),
                  static_cast<double>(r.size()));
}

double rouge_limited_recall(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                            std::size_t n) {
  auto c = normalize_for_scoring(candidate);
  auto r = normalize_for_scoring(reference);
  if (c.size() > r.size()) c.resize(r.size());
  return n == 0 ? rouge_l(c, r).recall : rouge_n(c, r, n).recall;
}

double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::string>>& references, std::size_t max_n) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) + " candidates for " +
                                std::to_string(references.size()) + " references");
  }
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be >= 1");
  std::vector<double> matched(max_n, 0.0), total(max_n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto c = normalize_for_scoring(candidates[i]);
    auto r = normalize_for_scoring(references[i]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      matched[n - 1] += static_cast<double>(clipped_overlap(ngrams(c, n), ngrams(r, n)));
      total[n - 1] += static_cast<double>(ngram_total(c.size(), n));
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

ScoreReport score_corpus(const std::vector<std::vector<std::string>>& candidates,
                         const std::vector<std::vector<std::string>>& references, RougeMode mode) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("score_corpus: " + std::to_string(candidates.size()) + " predictions for " +
                                std::to_string(references.size()) + " references");
  }
  ScoreReport report;
  report.mode = mode;
  report.pairs = candidates.size();
  PRF* slots[] = {&report.rouge1, &report.rouge2, &report.rouge4, &report.rougeL};
  const std::size_t orders[] = {1, 2, 4, 0};
  for (std::size_t k = 0; k < 4; ++k) {
    double p = 0.0, r = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      auto c = normalize_for_scoring(candidates[i]);
      auto ref = normalize_for_scoring(references[i]);
      if (mode == RougeMode::LimitedRecall && c.size() > ref.size()) c.resize(ref.size());
      PRF s = orders[k] == 0 ? rouge_l(c, ref) : rouge_n(c, ref, orders[k]);
      p += s.precision;
      r += s.recall;
    }
    if (!candidates.empty()) {
      p /= static_cast<double>(candidates.size());
      r /= static_cast<double>(candidates.size());
    }
    *slots[k] = {p, r, harmonic_mean(p, r)};
  }
  report.bleu = bleu(candidates, references, 4);
  return report;
}

std::string ScoreReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode == RougeMode::F1 ? "f1" : "limited_recall";
  j["pairs"] = pairs;
  auto prf = [](const PRF& s) {
    nlohmann::ordered_json o;
    o["precision"] = s.precision;
    o["recall"] = s.recall;
    o["f1"] = s.f1;
    return o;
  };
  j["rouge_1"] = prf(rouge1);
  j["rouge_2"] = prf(rouge2);
  j["rouge_4"] = prf(rouge4);
  j["rouge_l"] = prf(rougeL);
  j["bleu"] = bleu;
  return j.dump(2) + "\n";
}

std::string ScoreReport::to_text() const {
  char buf[512];
  const bool recall_mode = mode == RougeMode::LimitedRecall;
  auto main = [&](const PRF& s) { return 100.0 * (recall_mode ? s.recall : s.f1); };
  std::snprintf(buf, sizeof buf,
                "pairs      %zu\n"
                "mode       %s\n"
                "ROUGE-1    %6.2f\n"
                "ROUGE-2    %6.2f\n"
                "ROUGE-4    %6.2f\n"
                "ROUGE-L    %6.2f\n"
                "BLEU       %6.2f\n",
                pairs, recall_mode ? "limited-length recall" : "F1", main(rouge1), main(rouge2), main(rouge4),
                main(rougeL), 100.0 * bleu);
  return buf;
}

}  // namespace adadec
