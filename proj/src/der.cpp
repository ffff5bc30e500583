#include "metricdiar/der.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace metricdiar {

namespace {

using Intervals = std::vector<Interval>;

Intervals merge(Intervals xs) {
    std::sort(xs.begin(), xs.end(), [](const Interval &a, const Interval &b) { return a.start < b.start; });
    Intervals out;
    for (const auto &x : xs) {
        if (!(x.end > x.start)) continue;
        if (!out.empty() && x.start <= out.back().end) {
            out.back().end = std::max(out.back().end, x.end);
        } else {
            out.push_back(x);
        }
    }
    return out;
}

// a \ b, both merged.
Intervals subtract(const Intervals &a, const Intervals &b) {
    Intervals out;
    for (auto piece : a) {
        for (const auto &cut : b) {
            if (cut.end <= piece.start) continue;
            if (cut.start >= piece.end) break;
            if (cut.start > piece.start) out.push_back({piece.start, cut.start});
            piece.start = std::max(piece.start, cut.end);
            if (piece.start >= piece.end) break;
        }
        if (piece.end > piece.start) out.push_back(piece);
    }
    return out;
}

// Intervals where at least two distinct speakers are active.
Intervals overlap_regions(const Annotation &ref) {
    std::map<std::string, Intervals> per_speaker;
    for (const auto &t : ref.turns) per_speaker[t.speaker].push_back({t.onset, t.end()});
    std::vector<std::pair<double, int>> events;
    for (auto &[label, xs] : per_speaker) {
        for (const auto &x : merge(xs)) {
            events.emplace_back(x.start, +1);
            events.emplace_back(x.end, -1);
        }
    }
    // Ends sort before starts at equal times: touching turns do not overlap.
    std::sort(events.begin(), events.end());
    Intervals out;
    int active = 0;
    double opened = 0.0;
    for (const auto &[time, delta] : events) {
        const int before = active;
        active += delta;
        if (before < 2 && active >= 2) opened = time;
        if (before >= 2 && active < 2 && time > opened) out.push_back({opened, time});
    }
    return merge(out);
}

// Elementary pieces of the scoring regions, split at every turn boundary,
// with the distinct labels active in each.
struct Piece {
    double duration;
    std::vector<std::size_t> ref;
    std::vector<std::size_t> hyp;
};

std::size_t label_slot(std::vector<std::string> &labels, const std::string &label) {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it != labels.end()) return static_cast<std::size_t>(it - labels.begin());
    labels.push_back(label);
    return labels.size() - 1;
}

std::vector<std::size_t> active_at(const Annotation &a, const std::vector<std::size_t> &slots, double t) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < a.turns.size(); ++i) {
        const auto &turn = a.turns[i];
        if (turn.onset > t) break;
        if (t < turn.end() && std::find(out.begin(), out.end(), slots[i]) == out.end()) out.push_back(slots[i]);
    }
    return out;
}

std::vector<Piece> pieces(const Annotation &ref, const Annotation &hyp, const ScoringRegions &regions,
                          std::vector<std::string> &ref_labels, std::vector<std::string> &hyp_labels) {
    Annotation r = ref, h = hyp;
    r.normalize();
    h.normalize();
    std::vector<std::size_t> ref_slots, hyp_slots;
    for (const auto &t : r.turns) ref_slots.push_back(label_slot(ref_labels, t.speaker));
    for (const auto &t : h.turns) hyp_slots.push_back(label_slot(hyp_labels, t.speaker));

    std::vector<double> cuts;
    for (const auto &t : r.turns) cuts.insert(cuts.end(), {t.onset, t.end()});
    for (const auto &t : h.turns) cuts.insert(cuts.end(), {t.onset, t.end()});
    std::sort(cuts.begin(), cuts.end());

    std::vector<Piece> out;
    for (const auto &region : regions.intervals) {
        std::vector<double> edges{region.start};
        auto lo = std::upper_bound(cuts.begin(), cuts.end(), region.start);
        for (auto it = lo; it != cuts.end() && *it < region.end; ++it) {
            if (*it > edges.back()) edges.push_back(*it);
        }
        edges.push_back(region.end);
        for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
            const double mid = 0.5 * (edges[i] + edges[i + 1]);
            out.push_back({edges[i + 1] - edges[i], active_at(r, ref_slots, mid), active_at(h, hyp_slots, mid)});
        }
    }
    return out;
}

std::string fmt3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

// ─── Annotation ─────────────────────────────────────────────────────────────

void Annotation::normalize() {
    for (const auto &t : turns) {
        if (!(t.duration > 0.0)) throw ValidationError("turn of '" + t.speaker + "' in " + file_id +
                                                       " has non-positive duration");
    }
    std::stable_sort(turns.begin(), turns.end(), [](const Turn &a, const Turn &b) { return a.onset < b.onset; });
}

std::vector<std::string> Annotation::labels() const {
    std::vector<std::string> out;
    for (const auto &t : turns) {
        if (std::find(out.begin(), out.end(), t.speaker) == out.end()) out.push_back(t.speaker);
    }
    return out;
}

bool Annotation::has_overlap() const { return !overlap_regions(*this).empty(); }

double ScoringRegions::total() const {
    double s = 0.0;
    for (const auto &x : intervals) s += x.length();
    return s;
}

// ─── Scoring ────────────────────────────────────────────────────────────────

ScoringRegions scoring_regions(const Annotation &ref, double collar, bool skip_overlap) {
    if (!(collar >= 0.0)) throw ArgumentError("collar must be non-negative");
    Intervals speech;
    for (const auto &t : ref.turns) speech.push_back({t.onset, t.end()});
    speech = merge(std::move(speech));

    Intervals removed;
    if (collar > 0.0) {
        for (const auto &t : ref.turns) {
            removed.push_back({t.onset - collar, t.onset + collar});
            removed.push_back({t.end() - collar, t.end() + collar});
        }
    }
    if (skip_overlap) {
        const auto ov = overlap_regions(ref);
        removed.insert(removed.end(), ov.begin(), ov.end());
    }
    return {subtract(speech, merge(std::move(removed)))};
}

Cooccurrence cooccurrence(const Annotation &ref, const Annotation &hyp, const ScoringRegions &regions) {
    Cooccurrence c;
    c.ref_labels = ref.labels();
    c.hyp_labels = hyp.labels();
    const auto parts = pieces(ref, hyp, regions, c.ref_labels, c.hyp_labels);
    c.seconds = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.ref_labels.size()),
                                      static_cast<Eigen::Index>(c.hyp_labels.size()));
    for (const auto &p : parts) {
        for (auto r : p.ref) {
            for (auto h : p.hyp) c.seconds(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(h)) += p.duration;
        }
    }
    return c;
}

std::vector<int> max_weight_assignment(const Eigen::MatrixXd &weights) {
    const auto rows = static_cast<int>(weights.rows());
    const auto cols = static_cast<int>(weights.cols());
    const int n = std::max(rows, cols);
    if (n == 0) return {};
    const double top = weights.size() > 0 ? weights.maxCoeff() : 0.0;
    auto cost = [&](int i, int j) {
        const double w = (i < rows && j < cols) ? weights(i, j) : 0.0;
        return top - w;
    };

    // Shortest augmenting path with potentials, 1-based with a virtual column 0.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assignment(static_cast<std::size_t>(rows), -1);
    for (int j = 1; j <= n; ++j) {
        const int i = match[j] - 1;
        if (i >= 0 && i < rows && j - 1 < cols) assignment[static_cast<std::size_t>(i)] = j - 1;
    }
    return assignment;
}

std::map<std::string, std::string> optimal_mapping(const Annotation &ref, const Annotation &hyp,
                                                   const ScoringRegions &regions) {
    const auto c = cooccurrence(ref, hyp, regions);
    std::map<std::string, std::string> mapping;
    const auto assignment = max_weight_assignment(c.seconds);
    for (std::size_t r = 0; r < assignment.size(); ++r) {
        const int h = assignment[r];
        if (h >= 0 && c.seconds(static_cast<Eigen::Index>(r), h) > 0.0) {
            mapping[c.hyp_labels[static_cast<std::size_t>(h)]] = c.ref_labels[r];
        }
    }
    return mapping;
}

DerBreakdown &DerBreakdown::operator+=(const DerBreakdown &other) {
    missed += other.missed;
    false_alarm += other.false_alarm;
    confusion += other.confusion;
    total += other.total;
    return *this;
}

DerBreakdown compute_der(const Annotation &ref, const Annotation &hyp, double collar, bool skip_overlap) {
    const auto regions = scoring_regions(ref, collar, skip_overlap);
    const auto mapping = optimal_mapping(ref, hyp, regions);
    std::vector<std::string> ref_labels = ref.labels(), hyp_labels = hyp.labels();
    const auto parts = pieces(ref, hyp, regions, ref_labels, hyp_labels);

    // mapped[h] = ref slot of hyp slot h, or npos.
    constexpr auto npos = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> mapped(hyp_labels.size(), npos);
    for (std::size_t h = 0; h < hyp_labels.size(); ++h) {
        auto it = mapping.find(hyp_labels[h]);
        if (it == mapping.end()) continue;
        mapped[h] = static_cast<std::size_t>(std::find(ref_labels.begin(), ref_labels.end(), it->second) -
                                             ref_labels.begin());
    }

    DerBreakdown out;
    for (const auto &p : parts) {
        const double n_ref = static_cast<double>(p.ref.size());
        const double n_hyp = static_cast<double>(p.hyp.size());
        double n_correct = 0.0;
        for (auto r : p.ref) {
            for (auto h : p.hyp) {
                if (mapped[h] == r) {
                    n_correct += 1.0;
                    break;
                }
            }
        }
        out.total += n_ref * p.duration;
        out.missed += std::max(0.0, n_ref - n_hyp) * p.duration;
        out.false_alarm += std::max(0.0, n_hyp - n_ref) * p.duration;
        out.confusion += (std::min(n_ref, n_hyp) - n_correct) * p.duration;
    }
    if (!(out.total > 0.0)) {
        throw EvaluationError("no scorable reference speech in " + (ref.file_id.empty() ? "annotation" : ref.file_id));
    }
    return out;
}

// ─── RTTM ───────────────────────────────────────────────────────────────────

std::string format_rttm_line(const std::string &file_id, const Turn &turn) {
    return "SPEAKER " + file_id + " 1 " + fmt3(turn.onset) + " " + fmt3(turn.duration) + " <NA> <NA> " +
           turn.speaker + " <NA> <NA>";
}

void write_rttm(std::ostream &out, const std::vector<Annotation> &annotations) {
    for (const auto &a : annotations) {
        for (const auto &t : a.turns) out << format_rttm_line(a.file_id, t) << '\n';
    }
}

void write_rttm(const std::filesystem::path &path, const std::vector<Annotation> &annotations) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_rttm(out, annotations);
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Annotation> parse_rttm(std::istream &in) {
    std::vector<Annotation> out;
    std::map<std::string, std::size_t> slot;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::vector<std::string> f;
        for (std::string tok; fields >> tok;) f.push_back(tok);
        if (f.empty()) continue;
        if (f.size() != 10 || f[0] != "SPEAKER") {
            throw FormatError("RTTM line " + std::to_string(line_no) + ": expected 10 fields starting with SPEAKER");
        }
        Turn t;
        try {
            std::size_t used = 0;
            t.onset = std::stod(f[3], &used);
            if (used != f[3].size()) throw std::invalid_argument(f[3]);
            t.duration = std::stod(f[4], &used);
            if (used != f[4].size()) throw std::invalid_argument(f[4]);
        } catch (const std::exception &) {
            throw FormatError("RTTM line " + std::to_string(line_no) + ": bad onset or duration");
        }
        if (!(t.duration > 0.0) || !(t.onset >= 0.0)) {
            throw FormatError("RTTM line " + std::to_string(line_no) + ": onset must be >= 0 and duration > 0");
        }
        t.speaker = f[7];
        auto [it, inserted] = slot.emplace(f[1], out.size());
        if (inserted) out.push_back({f[1], {}});
        out[it->second].turns.push_back(std::move(t));
    }
    for (auto &a : out) a.normalize();
    return out;
}

std::vector<Annotation> read_rttm(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open RTTM " + path.string());
    return parse_rttm(in);
}

} // namespace metricdiar
