#pragma once

#include "metricdiar/features.hpp"
#include "metricdiar/sampling.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace metricdiar {

struct SynthSpec {
    std::size_t n_speakers = 8;
    std::size_t segments_per_speaker = 20;
    std::size_t frames_per_segment = 50;
    std::size_t dim = 12;
    // Distance between speaker means, in units of the within-speaker noise sigma.
    double separation = 6.0;
    std::uint64_t seed = 1;
    std::size_t speakers_per_conversation = 2;
    bool colored_noise = true;
    double segment_seconds = 2.0;
    // Prefix for speaker and conversation ids; distinct prefixes keep
    // corpora from different seeds in disjoint label namespaces.
    std::string prefix = "spk";
    // Cycled over conversations as the "language" tag when non-empty.
    std::vector<std::string> languages;
};

void validate(const SynthSpec &spec);

// Each speaker gets a mean vector (pairwise distance ~ separation) and a
// fixed lower-triangular temporal coloring of unit-variance Gaussian noise.
// Segments of a conversation's speakers are shuffled into consecutive slots.
Corpus generate_corpus(const SynthSpec &spec);

// Randomly partitions conversations into groups of group_size (a remainder
// forms a smaller last group) and concatenates each group, re-basing onsets.
// For group_size > 1, speaker labels are prefixed with their source
// conversation id so label namespaces stay disjoint.
Corpus concatenate_conversations(const Corpus &corpus, std::size_t group_size, Rng &rng);

} // namespace metricdiar
