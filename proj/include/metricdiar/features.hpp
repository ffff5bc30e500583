#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace metricdiar {

// Default segment geometry: 2 s of frames at a 10 ms hop, 60 coefficients.
inline constexpr std::size_t kDefaultFramesPerSegment = 200;
inline constexpr std::size_t kDefaultFeatureDim = 60;

// T x d matrix of per-frame features, row-major, frames in temporal order.
// Always finite; T >= 1 and d >= 1.
class FeatureMatrix {
public:
    FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    FeatureMatrix(std::size_t rows, std::size_t cols);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<const float> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<const float> data() const noexcept { return data_; }

    // Copy of rows [first, first + count).
    FeatureMatrix slice_rows(std::size_t first, std::size_t count) const;

    friend bool operator==(const FeatureMatrix &, const FeatureMatrix &) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<float> data_;
};

// FMAT layout: "FMAT" 0x01, u32le T, u32le d, T*d f32le row-major.
FeatureMatrix read_feature_file(const std::filesystem::path &path);
void write_feature_file(const FeatureMatrix &m, const std::filesystem::path &path);

// Byte-level codec shared with the checkpoint format.
std::vector<unsigned char> encode_fmat(const FeatureMatrix &m);
// Decodes one FMAT block starting at `offset`; advances `offset` past it.
FeatureMatrix decode_fmat(std::span<const unsigned char> bytes, std::size_t &offset,
                          const std::string &what);

// Splits into floor(T / frames_per_segment) consecutive chunks; the
// trailing remainder is dropped.
std::vector<FeatureMatrix> segment_sequence(const FeatureMatrix &full,
                                            std::size_t frames_per_segment);

struct SegmentRecord {
    std::string conversation_id;
    std::optional<std::string> speaker;
    double onset = 0.0;
    double duration = 0.0;
    FeatureMatrix features;
};

struct Conversation {
    std::string id;
    std::map<std::string, std::string> tags;
    std::vector<SegmentRecord> segments; // sorted by onset, non-overlapping
};

struct Geometry {
    std::size_t frames_per_segment = kDefaultFramesPerSegment;
    std::size_t dim = kDefaultFeatureDim;
    friend bool operator==(const Geometry &, const Geometry &) = default;
};

class Corpus {
public:
    Corpus() = default;
    // Sorts each conversation's segments by onset, then validates.
    Corpus(Geometry geometry, std::vector<Conversation> conversations);

    const Geometry &geometry() const noexcept { return geometry_; }
    const std::vector<Conversation> &conversations() const noexcept { return conversations_; }

    const Conversation &conversation(const std::string &id) const;
    const std::map<std::string, std::string> &tags(const std::string &id) const {
        return conversation(id).tags;
    }

    std::size_t segment_count() const;
    // Distinct speaker labels in first-appearance order.
    std::vector<std::string> speakers() const;
    bool fully_labeled() const;
    // Throws ValidationError unless every segment carries a speaker label.
    void require_labels() const;

private:
    void validate() const;

    Geometry geometry_;
    std::vector<Conversation> conversations_;
};

// Reads the JSON manifest; feature paths are relative to the manifest's
// directory unless absolute.
Corpus parse_manifest(const std::filesystem::path &path);

// Writes <dir>/manifest.json plus one FMAT file per segment under
// <dir>/features/. Returns the manifest path.
std::filesystem::path write_corpus(const Corpus &corpus, const std::filesystem::path &dir);

} // namespace metricdiar
