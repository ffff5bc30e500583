#include "metricdiar/pipeline.hpp"

#include "metricdiar/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace metricdiar {

Eigen::MatrixXd embed_segments(const EmbedderModel &model, const Conversation &conversation) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(conversation.segments.size()),
                        static_cast<Eigen::Index>(model.config.embed_dim));
    for (std::size_t i = 0; i < conversation.segments.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = forward(model, conversation.segments[i].features).transpose();
    }
    return out;
}

ClusterResult cluster_embeddings(const Eigen::MatrixXd &embeddings, const DiarizeOptions &options) {
    const auto n = static_cast<std::size_t>(embeddings.rows());
    if (n < options.k_min) {
        // Too few segments to honour the floor: everything is one speaker.
        ClusterResult r;
        r.k = n == 0 ? 0 : 1;
        r.labels.assign(n, 0);
        if (n > 0) r.centroids = embeddings.colwise().mean();
        return r;
    }
    const std::size_t k_max = std::max(options.k_min, options.k_max.value_or(default_k_max(n)));
    if (k_max > n) throw ArgumentError("k_max exceeds the number of segments");
    const ClusterResult estimate = xmeans(embeddings, options.k_min, k_max, options.seed, options.max_iter);
    ClusterResult refined = kmeans(embeddings, estimate.k, options.seed, options.max_iter);
    return refined.inertia < estimate.inertia ? refined : estimate;
}

Annotation diarize_conversation(const EmbedderModel &model, const Conversation &conversation,
                                const DiarizeOptions &options) {
    const auto clusters = cluster_embeddings(embed_segments(model, conversation), options);
    Annotation out{conversation.id, {}};
    for (std::size_t i = 0; i < conversation.segments.size(); ++i) {
        const auto &s = conversation.segments[i];
        out.turns.push_back({s.onset, s.duration, "spk" + std::to_string(clusters.labels[i])});
    }
    return out;
}

std::vector<Annotation> diarize_corpus(const EmbedderModel &model, const Corpus &corpus,
                                       const DiarizeOptions &options) {
    std::vector<Annotation> out;
    for (const auto &c : corpus.conversations()) out.push_back(diarize_conversation(model, c, options));
    return out;
}

Annotation reference_annotation(const Conversation &conversation) {
    Annotation out{conversation.id, {}};
    for (const auto &s : conversation.segments) {
        if (!s.speaker) throw ValidationError("conversation '" + conversation.id + "' has unlabelled segments");
        out.turns.push_back({s.onset, s.duration, *s.speaker});
    }
    return out;
}

std::vector<Annotation> reference_annotations(const Corpus &corpus) {
    std::vector<Annotation> out;
    for (const auto &c : corpus.conversations()) out.push_back(reference_annotation(c));
    return out;
}

CorpusScore score_corpus(const std::vector<Annotation> &ref, const std::vector<Annotation> &hyp,
                         const ScoreOptions &options) {
    CorpusScore score;
    for (const auto &r : ref) {
        auto it = std::find_if(hyp.begin(), hyp.end(), [&](const Annotation &h) { return h.file_id == r.file_id; });
        const Annotation empty{r.file_id, {}};
        const auto b = compute_der(r, it == hyp.end() ? empty : *it, options.collar, options.skip_overlap);
        score.overall += b;
        score.per_file.emplace_back(r.file_id, b);
    }
    if (!(score.overall.total > 0.0)) throw EvaluationError("no scorable reference speech");
    return score;
}

std::map<std::string, DerBreakdown> score_by_tag(const CorpusScore &score,
                                                 const std::map<std::string, std::map<std::string, std::string>> &tags,
                                                 const std::string &tag) {
    std::map<std::string, DerBreakdown> out;
    for (const auto &[file, b] : score.per_file) {
        std::string value = "<none>";
        if (auto f = tags.find(file); f != tags.end()) {
            if (auto t = f->second.find(tag); t != f->second.end()) value = t->second;
        }
        out[value] += b;
    }
    return out;
}

CorpusScore evaluate(const EmbedderModel &model, const Corpus &corpus, const DiarizeOptions &diarize,
                     const ScoreOptions &score) {
    return score_corpus(reference_annotations(corpus), diarize_corpus(model, corpus, diarize), score);
}

std::string embedding_hash(const EmbedderModel &model, const Corpus &corpus, std::size_t count) {
    std::uint64_t h = 1469598103934665603ULL;
    std::size_t seen = 0;
    for (const auto &c : corpus.conversations()) {
        for (const auto &s : c.segments) {
            if (seen++ == count) break;
            const Embedding z = forward(model, s.features);
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                unsigned char bytes[sizeof(double)];
                const double v = z(i);
                std::memcpy(bytes, &v, sizeof v);
                for (unsigned char b : bytes) {
                    h ^= b;
                    h *= 1099511628211ULL;
                }
            }
        }
        if (seen > count) break;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace metricdiar
