#pragma once

#include <string>
#include <vector>

namespace adadec {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double harmonic_mean(double p, double r);

/// Lowercases and drops reserved markers (<pad>, <s>, </s>) and everything
/// after the first </s>.
std::vector<std::string> normalize_for_scoring(const std::vector<std::string>& tokens);

/// Clipped n-gram overlap; zero when either side has no n-grams.
PRF rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n);
/// Longest-common-subsequence ROUGE.
PRF rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Recall after truncating the candidate to the reference length.
/// `n == 0` selects ROUGE-L.
double rouge_limited_recall(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                            std::size_t n);

/// Corpus BLEU: unsmoothed geometric mean of modified n-gram precisions for
/// n = 1..max_n, times the brevity penalty exp(1 - ref/cand) when cand < ref.
double bleu(const std::vector<std::vector<std::string>>& candidates,
            const std::vector<std::vector<std::string>>& references, std::size_t max_n = 4);

enum class RougeMode { F1, LimitedRecall };

struct ScoreReport {
  RougeMode mode = RougeMode::F1;
  std::size_t pairs = 0;
  PRF rouge1, rouge2, rouge4, rougeL;
  double bleu = 0.0;

  std::string to_json() const;
  std::string to_text() const;
};

/// Corpus scores: precision and recall are averaged over pairs and F1 is the
/// harmonic mean of those averages. In LimitedRecall mode each candidate is
/// truncated to its reference length before scoring.
ScoreReport score_corpus(const std::vector<std::vector<std::string>>& candidates,
                         const std::vector<std::vector<std::string>>& references, RougeMode mode = RougeMode::F1);

}  // namespace adadec
