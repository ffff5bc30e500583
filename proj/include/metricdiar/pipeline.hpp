#pragma once

#include "metricdiar/clustering.hpp"
#include "metricdiar/der.hpp"
#include "metricdiar/embedder.hpp"
#include "metricdiar/features.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace metricdiar {

struct DiarizeOptions {
    std::size_t k_min = 2;
    std::optional<std::size_t> k_max; // default_k_max(n) when unset
    std::uint64_t seed = 0;
    std::size_t max_iter = 100;
};

// n x e matrix of unit-norm segment embeddings.
Eigen::MatrixXd embed_segments(const EmbedderModel &model, const Conversation &conversation);

// x-means estimates k (never below k_min), then k-means++ at that k; the
// lower-inertia of the two labelings is kept.
ClusterResult cluster_embeddings(const Eigen::MatrixXd &embeddings, const DiarizeOptions &options);

// One turn per segment, labelled by cluster.
Annotation diarize_conversation(const EmbedderModel &model, const Conversation &conversation,
                                const DiarizeOptions &options);
std::vector<Annotation> diarize_corpus(const EmbedderModel &model, const Corpus &corpus,
                                       const DiarizeOptions &options);

// One turn per labelled segment.
Annotation reference_annotation(const Conversation &conversation);
std::vector<Annotation> reference_annotations(const Corpus &corpus);

struct CorpusScore {
    DerBreakdown overall; // time-weighted sum over files
    std::vector<std::pair<std::string, DerBreakdown>> per_file;
};

struct ScoreOptions {
    double collar = 0.25;
    bool skip_overlap = true;
};

// Scores every reference file; a file absent from `hyp` scores as all missed.
CorpusScore score_corpus(const std::vector<Annotation> &ref, const std::vector<Annotation> &hyp,
                         const ScoreOptions &options = {});

// Time-weighted DER per value of `tag` (files without the tag go to "<none>").
std::map<std::string, DerBreakdown> score_by_tag(const CorpusScore &score,
                                                 const std::map<std::string, std::map<std::string, std::string>> &tags,
                                                 const std::string &tag);

CorpusScore evaluate(const EmbedderModel &model, const Corpus &corpus, const DiarizeOptions &diarize,
                     const ScoreOptions &score = {});

// FNV-1a over the embeddings of the first `count` segments (corpus order).
std::string embedding_hash(const EmbedderModel &model, const Corpus &corpus, std::size_t count = 8);

} // namespace metricdiar
