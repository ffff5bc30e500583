#include "metricdiar/features.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

namespace metricdiar {

namespace {

constexpr unsigned char kMagic[4] = {'F', 'M', 'A', 'T'};
constexpr unsigned char kVersion = 0x01;
constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 4;
constexpr double kTimeTolerance = 1e-9;

void put_u32(std::vector<unsigned char> &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
}

void check_finite(std::span<const float> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw ValidationError("feature value at flat index " + std::to_string(i) +
                                  " is not finite");
        }
    }
}

std::string describe(const SegmentRecord &s) {
    std::ostringstream os;
    os << "segment of conversation '" << s.conversation_id << "' at onset " << s.onset;
    return os.str();
}

} // namespace

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) throw ValidationError("feature matrix must be at least 1x1");
    if (data_.size() != rows_ * cols_) {
        throw ValidationError("feature matrix payload has " + std::to_string(data_.size()) +
                              " values, expected " + std::to_string(rows_ * cols_));
    }
    check_finite(data_);
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols)
    : FeatureMatrix(rows, cols, std::vector<float>(rows * cols, 0.0f)) {}

FeatureMatrix FeatureMatrix::slice_rows(std::size_t first, std::size_t count) const {
    if (first + count > rows_) throw ArgumentError("row slice out of range");
    auto begin = data_.begin() + static_cast<std::ptrdiff_t>(first * cols_);
    return FeatureMatrix(count, cols_,
                         std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(count * cols_)));
}

// ─── FMAT codec ─────────────────────────────────────────────────────────────

std::vector<unsigned char> encode_fmat(const FeatureMatrix &m) {
    static_assert(std::endian::native == std::endian::little, "FMAT writer assumes little-endian host");
    std::vector<unsigned char> out;
    out.reserve(kHeaderBytes + m.data().size() * 4);
    for (unsigned char c : kMagic) out.push_back(c);
    out.push_back(kVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (float f : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

FeatureMatrix decode_fmat(std::span<const unsigned char> bytes, std::size_t &offset,
                          const std::string &what) {
    if (bytes.size() < offset + kHeaderBytes) {
        throw TruncationError(what + ": truncated FMAT header");
    }
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin() + offset)) {
        throw FormatError(what + ": bad FMAT magic");
    }
    if (bytes[offset + 4] != kVersion) {
        throw FormatError(what + ": unsupported FMAT version " + std::to_string(bytes[offset + 4]));
    }
    const std::uint64_t rows = get_u32(bytes, offset + 5);
    const std::uint64_t cols = get_u32(bytes, offset + 9);
    const std::uint64_t payload = rows * cols * 4;
    const std::size_t start = offset + kHeaderBytes;
    if (bytes.size() - start < payload) {
        throw TruncationError(what + ": declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " but payload holds only " + std::to_string(bytes.size() - start) + " bytes");
    }
    std::vector<float> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<float>(get_u32(bytes, start + 4 * i));
    }
    offset = start + payload;
    try {
        return FeatureMatrix(rows, cols, std::move(values));
    } catch (const ValidationError &e) {
        throw ValidationError(what + ": " + e.what());
    }
}

FeatureMatrix read_feature_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t offset = 0;
    auto m = decode_fmat(bytes, offset, path.string());
    if (offset != bytes.size()) {
        throw TruncationError(path.string() + ": " + std::to_string(bytes.size() - offset) +
                              " trailing bytes after declared payload");
    }
    return m;
}

void write_feature_file(const FeatureMatrix &m, const std::filesystem::path &path) {
    const auto bytes = encode_fmat(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<FeatureMatrix> segment_sequence(const FeatureMatrix &full, std::size_t frames_per_segment) {
    if (frames_per_segment == 0) throw ArgumentError("frames_per_segment must be positive");
    const std::size_t count = full.rows() / frames_per_segment;
    std::vector<FeatureMatrix> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(full.slice_rows(i * frames_per_segment, frames_per_segment));
    }
    return out;
}

// ─── Corpus ─────────────────────────────────────────────────────────────────

Corpus::Corpus(Geometry geometry, std::vector<Conversation> conversations)
    : geometry_(geometry), conversations_(std::move(conversations)) {
    for (auto &c : conversations_) {
        std::stable_sort(c.segments.begin(), c.segments.end(),
                         [](const SegmentRecord &a, const SegmentRecord &b) { return a.onset < b.onset; });
    }
    validate();
}

void Corpus::validate() const {
    if (geometry_.frames_per_segment == 0 || geometry_.dim == 0) {
        throw ValidationError("corpus geometry must be positive");
    }
    std::set<std::string> ids;
    for (const auto &c : conversations_) {
        if (!ids.insert(c.id).second) throw ValidationError("duplicate conversation id '" + c.id + "'");
        for (std::size_t i = 0; i < c.segments.size(); ++i) {
            const auto &s = c.segments[i];
            if (s.conversation_id != c.id) {
                throw ValidationError(describe(s) + " is filed under conversation '" + c.id + "'");
            }
            if (!(s.onset >= 0.0) || !(s.duration > 0.0)) {
                throw ValidationError(describe(s) + " needs onset >= 0 and duration > 0");
            }
            if (s.features.rows() != geometry_.frames_per_segment || s.features.cols() != geometry_.dim) {
                throw ValidationError(describe(s) + " has features " + std::to_string(s.features.rows()) + "x" +
                                      std::to_string(s.features.cols()) + ", corpus geometry is " +
                                      std::to_string(geometry_.frames_per_segment) + "x" +
                                      std::to_string(geometry_.dim));
            }
            if (i > 0) {
                const auto &prev = c.segments[i - 1];
                if (prev.onset + prev.duration > s.onset + kTimeTolerance) {
                    throw ValidationError(describe(s) + " overlaps the previous segment");
                }
            }
        }
    }
}

const Conversation &Corpus::conversation(const std::string &id) const {
    auto it = std::find_if(conversations_.begin(), conversations_.end(),
                           [&](const Conversation &c) { return c.id == id; });
    if (it == conversations_.end()) throw ArgumentError("unknown conversation '" + id + "'");
    return *it;
}

std::size_t Corpus::segment_count() const {
    std::size_t n = 0;
    for (const auto &c : conversations_) n += c.segments.size();
    return n;
}

std::vector<std::string> Corpus::speakers() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto &c : conversations_) {
        for (const auto &s : c.segments) {
            if (s.speaker && seen.insert(*s.speaker).second) out.push_back(*s.speaker);
        }
    }
    return out;
}

bool Corpus::fully_labeled() const {
    for (const auto &c : conversations_) {
        for (const auto &s : c.segments) {
            if (!s.speaker) return false;
        }
    }
    return true;
}

void Corpus::require_labels() const {
    for (const auto &c : conversations_) {
        for (const auto &s : c.segments) {
            if (!s.speaker) throw ValidationError(describe(s) + " has no speaker label");
        }
    }
}

// ─── Manifest ───────────────────────────────────────────────────────────────

Corpus parse_manifest(const std::filesystem::path &path) {
    using nlohmann::json;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    try {
        Geometry geometry{doc.at("frames_per_segment").get<std::size_t>(), doc.at("dim").get<std::size_t>()};
        std::vector<Conversation> conversations;
        for (const auto &jc : doc.at("conversations")) {
            Conversation c;
            c.id = jc.at("id").get<std::string>();
            if (jc.contains("tags")) c.tags = jc.at("tags").get<std::map<std::string, std::string>>();
            for (const auto &js : jc.at("segments")) {
                std::filesystem::path file = js.at("file").get<std::string>();
                if (file.is_relative()) file = base / file;
                if (!std::filesystem::exists(file)) {
                    throw IoError("feature file " + file.string() + " referenced by conversation '" + c.id +
                                  "' does not exist");
                }
                SegmentRecord s{c.id, std::nullopt, js.at("onset").get<double>(),
                                js.at("duration").get<double>(), read_feature_file(file)};
                if (js.contains("speaker") && !js.at("speaker").is_null()) {
                    s.speaker = js.at("speaker").get<std::string>();
                }
                c.segments.push_back(std::move(s));
            }
            conversations.push_back(std::move(c));
        }
        return Corpus(geometry, std::move(conversations));
    } catch (const json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::filesystem::path write_corpus(const Corpus &corpus, const std::filesystem::path &dir) {
    using nlohmann::json;
    std::error_code ec;
    std::filesystem::create_directories(dir / "features", ec);
    if (ec) throw IoError("cannot create " + (dir / "features").string() + ": " + ec.message());

    json doc;
    doc["frames_per_segment"] = corpus.geometry().frames_per_segment;
    doc["dim"] = corpus.geometry().dim;
    doc["conversations"] = json::array();
    std::size_t conv_index = 0;
    for (const auto &c : corpus.conversations()) {
        json jc;
        jc["id"] = c.id;
        jc["tags"] = c.tags;
        jc["segments"] = json::array();
        for (std::size_t i = 0; i < c.segments.size(); ++i) {
            const auto &s = c.segments[i];
            const std::string rel = "features/c" + std::to_string(conv_index) + "_s" + std::to_string(i) + ".fmat";
            write_feature_file(s.features, dir / rel);
            json js;
            js["speaker"] = s.speaker ? json(*s.speaker) : json(nullptr);
            js["onset"] = s.onset;
            js["duration"] = s.duration;
            js["file"] = rel;
            jc["segments"].push_back(std::move(js));
        }
        doc["conversations"].push_back(std::move(jc));
        ++conv_index;
    }
    const auto manifest = dir / "manifest.json";
    std::ofstream out(manifest, std::ios::trunc);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << doc.dump(2) << '\n';
    return manifest;
}

} // namespace metricdiar
