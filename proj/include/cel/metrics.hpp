#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cel/tensor.hpp"

// Boundary evaluation: tolerance-matched precision/recall with dataset-level
// (ODS) and per-image (OIS) optimal thresholds, Dice, Hausdorff, and the
// crispness sweep over shrinking tolerances.

namespace cel {

struct EvalConfig {
  double d = 0.0075;                // match radius as a fraction of the image diagonal
  std::vector<double> thresholds;   // ascending grid in (0,1)
  double hd_empty_value = -1.0;     // <0 means "use the image diagonal"

  EvalConfig();
  void validate() const;
};

struct MatchCounts {
  int64_t tp_pred = 0, n_pred = 0, tp_gt = 0, n_gt = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp_pred += o.tp_pred;
    n_pred += o.n_pred;
    tp_gt += o.tp_gt;
    n_gt += o.n_gt;
    return *this;
  }
};

struct PRF {
  double precision = 0, recall = 0, f = 0;
};

struct Point3 {
  int64_t z = 0, y = 0, x = 0;  // z stays 0 for 2d masks
};

std::vector<Point3> mask_points(const ByteTensor& mask);

double image_diagonal(const Shape& spatial);

// p >= t is foreground.
ByteTensor binarize(const Tensor& prob, double t);

// Maximum-cardinality one-to-one matching under Euclidean distance <= radius.
MatchCounts match_edges(const std::vector<Point3>& pred, const std::vector<Point3>& gt,
                        double radius);

PRF pr_f(const MatchCounts& c);

struct OdsResult {
  double threshold = 0;
  PRF prf;
};

struct OdsOis {
  OdsResult ods;
  PRF ois;
};

// Shares the per-image, per-threshold count matrix between both protocols.
OdsOis ods_ois(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
               const EvalConfig& cfg);

OdsResult ods(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
              const EvalConfig& cfg);

PRF ois(const std::vector<Tensor>& preds, const std::vector<ByteTensor>& gts,
        const EvalConfig& cfg);

double dice(const ByteTensor& pred, const ByteTensor& gt);

// One empty set yields empty_value, both empty yields 0.
double hausdorff(const std::vector<Point3>& a, const std::vector<Point3>& b, double empty_value);

double hd_empty_for(const EvalConfig& cfg, const Shape& spatial);

struct SweepRow {
  double d = 0;
  double ods_f = 0;
  double ois_f = 0;
};

inline const std::vector<double> kDefaultSweepD = {0.01, 0.0075, 0.005, 0.003};

// d_list must be descending; evaluates the same predictions under tighter
// and tighter tolerances.
std::vector<SweepRow> crispness_sweep(const std::vector<Tensor>& preds,
                                      const std::vector<ByteTensor>& gts,
                                      const std::vector<double>& d_list, const EvalConfig& base);

// One CSV line per evaluated output; absent fields stay empty.
struct ReportRow {
  std::string metric;   // ods | ois | final
  std::string dataset;  // test | train
  std::string phase;    // phase1_fusion | phase2_side1..8 | phase2_fusion | final
  double d = 0;
  std::optional<double> threshold;
  PRF prf;
  std::optional<double> dsc;
  std::optional<double> hd;
};

extern const char* const kReportHeader;

std::string format_report_csv(const std::vector<ReportRow>& rows);
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

}  // namespace cel
