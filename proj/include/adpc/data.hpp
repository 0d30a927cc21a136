#pragma once

#include <string>
#include <vector>

#include "adpc/nn.hpp"

namespace adpc::data {

using ag::Mat;
using nn::VolumeGrid;

struct SampleRecord {
    std::string id;
    std::string visual;   // path to a volume (.f32) or feature file, resolved
    std::string summary;  // path to the summary text
    std::string label;    // CN / MCI / AD
};

// Class sets: {CN, MCI, AD} for 3-way, {CN, AD} for binary.
const std::vector<std::string>& class_names(int n_classes);
int label_index(const std::string& label, int n_classes);  // BadLabel on miss

// Manifest: one JSON object per line with fields id, visual, summary, label.
// Relative paths resolve against the manifest's directory; referenced files
// must exist. Errors carry the offending line number.
std::vector<SampleRecord> load_manifest(const std::string& path, int n_classes = 3);
void save_manifest(const std::string& path, const std::vector<SampleRecord>& records);

// Volume files: raw little-endian float32, z-major; a "<path>.meta" sidecar
// records dims/dtype/order. Feature files share the encoding with 2D dims.
void write_volume(const std::string& path, const VolumeGrid& vol);
VolumeGrid read_volume(const std::string& path);
void write_features(const std::string& path, const Mat& features);
Mat read_features(const std::string& path);

struct SplitIndices {
    std::vector<size_t> train, val, test;
};

// Stratified by class, shuffled per class under the seed, exact partition.
SplitIndices stratified_split(const std::vector<int>& labels, double f_train,
                              double f_val, double f_test, uint64_t seed);

struct SynthSpec {
    std::vector<int> counts;        // per class, size = n_classes
    int n_classes = 3;
    int vol = 32;                   // cubic volume edge
    double noise = 0.05;
    bool class_visual_signal = true;   // class-dependent blob radius/intensity
    bool class_keywords = true;        // planted per-class token in summaries
    std::vector<std::string> planted_tokens;  // defaults per class set

    // Spurious cue: a token plus a corner voxel artifact that co-occurs with
    // the designated class with probability rho_train (train+val) and
    // rho_test (test).
    bool confound = false;
    int confound_class = -1;        // default: last class
    double rho_train = 0.9;
    double rho_test = 0.1;
    std::string confound_token = "sitemarker";

    double split_train = 0.8, split_val = 0.1, split_test = 0.1;
    uint64_t seed = 0;

    void validate() const;  // InvalidSpec
};

struct SynthResult {
    std::string manifest_all;
    std::string manifest_train;
    std::string manifest_val;
    std::string manifest_test;
    int n_samples = 0;
};

// Writes volumes, summaries, and the four manifests under out_dir.
// Deterministic: the same spec and seed reproduce every file byte for byte.
SynthResult synth_dataset(const SynthSpec& spec, const std::string& out_dir);

}  // namespace adpc::data
