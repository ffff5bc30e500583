#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace metricdiar {

// Half-open [onset, onset + duration), seconds.
struct Turn {
    double onset = 0.0;
    double duration = 0.0;
    std::string speaker;

    double end() const noexcept { return onset + duration; }
};

struct Annotation {
    std::string file_id;
    std::vector<Turn> turns;

    // Sorts turns by onset and rejects non-positive durations.
    void normalize();
    std::vector<std::string> labels() const;
    bool has_overlap() const;
};

struct Interval {
    double start = 0.0;
    double end = 0.0;
    double length() const noexcept { return end - start; }
};

struct ScoringRegions {
    std::vector<Interval> intervals; // disjoint, sorted, positive length
    double total() const;
};

// Oracle speech (union of reference turns) minus [b - collar, b + collar]
// around every reference boundary b, minus multi-speaker regions when
// skip_overlap is set.
ScoringRegions scoring_regions(const Annotation &ref, double collar = 0.25, bool skip_overlap = true);

// Co-occurrence durations inside the scoring regions.
struct Cooccurrence {
    std::vector<std::string> ref_labels;
    std::vector<std::string> hyp_labels;
    Eigen::MatrixXd seconds; // ref x hyp
};

Cooccurrence cooccurrence(const Annotation &ref, const Annotation &hyp, const ScoringRegions &regions);

// Maximum-weight one-to-one assignment for a rows x cols weight matrix.
// Returns, for each row, the assigned column or -1.
std::vector<int> max_weight_assignment(const Eigen::MatrixXd &weights);

// hyp label -> ref label maximizing total co-occurring duration. Labels
// without a positive-overlap partner are left unmapped.
std::map<std::string, std::string> optimal_mapping(const Annotation &ref, const Annotation &hyp,
                                                   const ScoringRegions &regions);

struct DerBreakdown {
    double missed = 0.0;
    double false_alarm = 0.0;
    double confusion = 0.0;
    double total = 0.0;

    double der() const { return (missed + false_alarm + confusion) / total; }
    DerBreakdown &operator+=(const DerBreakdown &other);
};

// Throws EvaluationError when no reference speech survives the scoring regions.
DerBreakdown compute_der(const Annotation &ref, const Annotation &hyp, double collar = 0.25,
                         bool skip_overlap = true);

// ─── RTTM ───────────────────────────────────────────────────────────────────

// SPEAKER <file> 1 <onset:.3f> <duration:.3f> <NA> <NA> <label> <NA> <NA>
std::string format_rttm_line(const std::string &file_id, const Turn &turn);
void write_rttm(std::ostream &out, const std::vector<Annotation> &annotations);
void write_rttm(const std::filesystem::path &path, const std::vector<Annotation> &annotations);

// Annotations in order of first appearance; turns sorted by onset.
std::vector<Annotation> parse_rttm(std::istream &in);
std::vector<Annotation> read_rttm(const std::filesystem::path &path);

} // namespace metricdiar
