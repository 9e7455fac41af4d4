#include "fpemb/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "fpemb/common.hpp"
#include "json.hpp"

namespace fpemb {
namespace {

void mean_std(const std::vector<double>& v, double* mean, double* std_dev) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.empty() ? 1.0 : static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  *mean = m;
  *std_dev = v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

std::string format_sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string pair_protocol_name(PairProtocol protocol) {
  return protocol == PairProtocol::kAllPairs ? "all_pairs" : "fvc_standard";
}

PairProtocol pair_protocol_from_name(const std::string& name) {
  if (name == "all_pairs") return PairProtocol::kAllPairs;
  if (name == "fvc_standard") return PairProtocol::kFvcStandard;
  fail(ErrorKind::kConfig, "unknown pair protocol '" + name + "'");
}

PairList fvc_pairs(const DatasetIndex& index, PairProtocol protocol) {
  const auto& recs = index.records;
  const int n = static_cast<int>(recs.size());
  PairList pairs;
  bool any_genuine = false;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (recs[i].finger_id == recs[j].finger_id) {
        pairs.genuine.emplace_back(i, j);
        any_genuine = true;
      }
  FPEMB_CHECK(any_genuine, ErrorKind::kProtocol,
              "no finger has at least two impressions");

  if (protocol == PairProtocol::kAllPairs) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (recs[i].finger_id != recs[j].finger_id)
          pairs.impostor.emplace_back(i, j);
  } else {
    // Records are sorted by (finger, impression), so the first record per
    // finger is its first impression.
    std::map<int, int> first_of;
    for (int i = 0; i < n; ++i)
      first_of.emplace(recs[i].finger_id, i);
    std::vector<int> firsts;
    firsts.reserve(first_of.size());
    for (const auto& [finger, idx] : first_of) firsts.push_back(idx);
    for (std::size_t a = 0; a < firsts.size(); ++a)
      for (std::size_t b = a + 1; b < firsts.size(); ++b)
        pairs.impostor.emplace_back(firsts[a], firsts[b]);
  }
  return pairs;
}

double match_score(const std::vector<double>& a, const std::vector<double>& b) {
  FPEMB_CHECK(a.size() == b.size() && !a.empty(), ErrorKind::kContract,
              "embedding dimensions differ");
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    dot += a[i] * b[i];
  }
  FPEMB_CHECK(std::abs(std::sqrt(na) - 1.0) < 1e-3 &&
                  std::abs(std::sqrt(nb) - 1.0) < 1e-3,
              ErrorKind::kContract, "match inputs must be unit-norm");
  return dot;
}

EerResult compute_eer(const std::vector<double>& genuine_scores,
                      const std::vector<double>& impostor_scores) {
  FPEMB_CHECK(!genuine_scores.empty() && !impostor_scores.empty(),
              ErrorKind::kContract, "score lists must be nonempty");
  std::vector<double> gen = genuine_scores, imp = impostor_scores;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  std::vector<double> thresholds;
  thresholds.reserve(gen.size() + imp.size());
  thresholds.insert(thresholds.end(), gen.begin(), gen.end());
  thresholds.insert(thresholds.end(), imp.begin(), imp.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double ng = static_cast<double>(gen.size());
  const double ni = static_cast<double>(imp.size());
  EerResult result;
  result.det.reserve(thresholds.size());
  for (double t : thresholds) {
    // Accept iff score >= t.
    const auto imp_ge =
        imp.end() - std::lower_bound(imp.begin(), imp.end(), t);
    const auto gen_lt =
        std::lower_bound(gen.begin(), gen.end(), t) - gen.begin();
    result.det.push_back(
        {t, static_cast<double>(imp_ge) / ni, static_cast<double>(gen_lt) / ng});
  }

  // Candidates: every swept threshold plus the interpolated crossing of
  // D = FAR - FRR between adjacent thresholds.
  double best_gap = 1e300;
  double best_far = 0.0, best_frr = 0.0, best_t = 0.0;
  auto consider = [&](double t, double far, double frr) {
    // Candidates arrive in ascending threshold order; ties keep the first.
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best_far = far;
      best_frr = frr;
      best_t = t;
    }
  };
  for (std::size_t i = 0; i < result.det.size(); ++i) {
    consider(result.det[i].threshold, result.det[i].far, result.det[i].frr);
    if (i + 1 < result.det.size()) {
      const double d0 = result.det[i].far - result.det[i].frr;
      const double d1 = result.det[i + 1].far - result.det[i + 1].frr;
      if (d0 > 0.0 && d1 < 0.0) {
        const double alpha = d0 / (d0 - d1);
        consider(result.det[i].threshold +
                     alpha * (result.det[i + 1].threshold -
                              result.det[i].threshold),
                 result.det[i].far +
                     alpha * (result.det[i + 1].far - result.det[i].far),
                 result.det[i].frr +
                     alpha * (result.det[i + 1].frr - result.det[i].frr));
      }
    }
  }
  result.eer = 0.5 * (best_far + best_frr);
  result.threshold = best_t;
  return result;
}

EvalReport evaluate_dataset(const DatasetIndex& index,
                            const EmbeddingStore& embeddings,
                            PairProtocol protocol,
                            std::vector<ScoredPair>* scores) {
  const PairList pairs = fvc_pairs(index, protocol);

  std::vector<std::vector<double>> rows(index.records.size());
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    const int at = embeddings.find(index.records[i].image_id);
    FPEMB_CHECK(at >= 0, ErrorKind::kLookup,
                "no embedding for image " + index.records[i].image_id);
    rows[i] = embeddings.row(at);
  }

  auto score_pairs = [&](const std::vector<std::pair<int, int>>& list,
                         const char* type) {
    std::vector<double> out;
    out.reserve(list.size());
    for (const auto& [a, b] : list) {
      const double s = match_score(rows[a], rows[b]);
      out.push_back(s);
      if (scores)
        scores->push_back({type, index.records[a].image_id,
                           index.records[b].image_id, s});
    }
    return out;
  };
  const std::vector<double> gen = score_pairs(pairs.genuine, "genuine");
  const std::vector<double> imp = score_pairs(pairs.impostor, "impostor");

  const EerResult eer = compute_eer(gen, imp);
  EvalReport report;
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.genuine_count = gen.size();
  report.impostor_count = imp.size();
  mean_std(gen, &report.genuine_mean, &report.genuine_std);
  mean_std(imp, &report.impostor_mean, &report.impostor_std);
  report.det = eer.det;
  return report;
}

void write_eval_report(const EvalReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["eer"] = report.eer;
  j["eer_threshold"] = report.eer_threshold;
  j["genuine_count"] = report.genuine_count;
  j["impostor_count"] = report.impostor_count;
  j["genuine_mean"] = report.genuine_mean;
  j["genuine_std"] = report.genuine_std;
  j["impostor_mean"] = report.impostor_mean;
  j["impostor_std"] = report.impostor_std;
  const std::string report_path =
      (std::filesystem::path(dir) / "report.json").string();
  std::ofstream out(report_path, std::ios::trunc);
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "cannot write " + report_path);
  out << j.dump(2) << "\n";

  const std::string det_path = (std::filesystem::path(dir) / "det.csv").string();
  std::ofstream det(det_path, std::ios::trunc);
  FPEMB_CHECK(det.good(), ErrorKind::kInput, "cannot write " + det_path);
  det << "threshold,far,frr\n";
  for (const DetPoint& p : report.det)
    det << format_sig9(p.threshold) << "," << format_sig9(p.far) << ","
        << format_sig9(p.frr) << "\n";
  FPEMB_CHECK(det.good(), ErrorKind::kInput, "failed writing " + det_path);
}

void write_scores_csv(const std::vector<ScoredPair>& scores,
                      const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "cannot write " + path);
  out << "pair_type,image_a,image_b,score\n";
  for (const ScoredPair& s : scores)
    out << s.pair_type << "," << s.image_a << "," << s.image_b << ","
        << format_sig9(s.score) << "\n";
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "failed writing " + path);
}

}  // namespace fpemb
