#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fpemb/dataset.hpp"
#include "fpemb/embedding_io.hpp"

namespace fpemb {

// all_pairs: every unordered same-finger pair is genuine, every cross-finger
// pair is impostor. fvc_standard: impostor pairs use only each finger's
// first impression.
enum class PairProtocol { kAllPairs, kFvcStandard };

std::string pair_protocol_name(PairProtocol protocol);
PairProtocol pair_protocol_from_name(const std::string& name);

struct PairList {
  std::vector<std::pair<int, int>> genuine;   // record indices, first < second
  std::vector<std::pair<int, int>> impostor;
};

PairList fvc_pairs(const DatasetIndex& index, PairProtocol protocol);

// Inner product of two unit-norm embeddings of equal dimension.
double match_score(const std::vector<double>& a, const std::vector<double>& b);

struct DetPoint {
  double threshold = 0.0, far = 0.0, frr = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::vector<DetPoint> det;
};

// Threshold sweep over all distinct scores (accept iff score >= threshold),
// picking the point minimizing |FAR - FRR| among the thresholds and the
// linearly interpolated crossing; EER is the mean of FAR and FRR there.
EerResult compute_eer(const std::vector<double>& genuine_scores,
                      const std::vector<double>& impostor_scores);

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
  double genuine_mean = 0.0, genuine_std = 0.0;
  double impostor_mean = 0.0, impostor_std = 0.0;
  std::vector<DetPoint> det;
};

struct ScoredPair {
  std::string pair_type;  // "genuine" or "impostor"
  std::string image_a, image_b;
  double score = 0.0;
};

EvalReport evaluate_dataset(const DatasetIndex& index,
                            const EmbeddingStore& embeddings,
                            PairProtocol protocol,
                            std::vector<ScoredPair>* scores = nullptr);

void write_eval_report(const EvalReport& report, const std::string& dir);
void write_scores_csv(const std::vector<ScoredPair>& scores,
                      const std::string& path);

}  // namespace fpemb
