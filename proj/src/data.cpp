#include "adpc/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adpc/rng.hpp"
#include "adpc/util.hpp"

namespace adpc::data {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& class_names(int n_classes) {
    static const std::vector<std::string> kThree = {"CN", "MCI", "AD"};
    static const std::vector<std::string> kTwo = {"CN", "AD"};
    if (n_classes == 3) return kThree;
    if (n_classes == 2) return kTwo;
    throw BadLabel("unsupported class count: " + std::to_string(n_classes));
}

int label_index(const std::string& label, int n_classes) {
    const auto& names = class_names(n_classes);
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == label) return static_cast<int>(i);
    throw BadLabel("unknown label '" + label + "'");
}

std::vector<SampleRecord> load_manifest(const std::string& path, int n_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot read manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    std::vector<SampleRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        SampleRecord rec;
        try {
            rec.id = j.at("id").get<std::string>();
            rec.visual = j.at("visual").get<std::string>();
            rec.summary = j.at("summary").get<std::string>();
            rec.label = j.at("label").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                             e.what());
        }
        try {
            label_index(rec.label, n_classes);
        } catch (const BadLabel& e) {
            throw BadLabel("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        for (std::string* p : {&rec.visual, &rec.summary}) {
            fs::path resolved = fs::path(*p).is_absolute() ? fs::path(*p) : base / *p;
            if (!fs::exists(resolved))
                throw MissingFile("manifest line " + std::to_string(line_no) +
                                  ": missing file " + resolved.string());
            *p = resolved.string();
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) {
        json j{{"id", r.id}, {"visual", r.visual}, {"summary", r.summary},
               {"label", r.label}};
        out << j.dump() << '\n';
    }
    util::write_file(path, out.str());
}

namespace {

void write_raw_f32(const std::string& path, const double* data, size_t n) {
    std::vector<float> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot write: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<float> read_raw_f32(const std::string& path, size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot read: " + path);
    std::vector<float> buf(expected);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != expected * sizeof(float))
        throw ParseError("short read: " + path);
    return buf;
}

std::vector<long> sidecar_dims(const std::string& path) {
    const std::string meta = util::read_file(path + ".meta");
    std::istringstream in(meta);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("dims:", 0) == 0) {
            std::istringstream ds(line.substr(5));
            std::vector<long> dims;
            long v;
            while (ds >> v) dims.push_back(v);
            return dims;
        }
    }
    throw ParseError("sidecar without dims: " + path + ".meta");
}

}  // namespace

void write_volume(const std::string& path, const VolumeGrid& vol) {
    write_raw_f32(path, vol.voxels.data(), vol.voxels.size());
    std::ostringstream meta;
    meta << "dims: " << vol.h << ' ' << vol.w << ' ' << vol.d << '\n'
         << "dtype: float32\n"
         << "order: z-major\n";
    util::write_file(path + ".meta", meta.str());
}

VolumeGrid read_volume(const std::string& path) {
    auto dims = sidecar_dims(path);
    if (dims.size() != 3) throw ParseError("expected 3 dims for volume: " + path);
    VolumeGrid vol;
    vol.h = static_cast<int>(dims[0]);
    vol.w = static_cast<int>(dims[1]);
    vol.d = static_cast<int>(dims[2]);
    size_t n = static_cast<size_t>(vol.h) * vol.w * vol.d;
    auto buf = read_raw_f32(path, n);
    vol.voxels.assign(buf.begin(), buf.end());
    return vol;
}

void write_features(const std::string& path, const Mat& features) {
    std::vector<double> row_major(static_cast<size_t>(features.size()));
    size_t k = 0;
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        for (Eigen::Index j = 0; j < features.cols(); ++j)
            row_major[k++] = features(i, j);
    write_raw_f32(path, row_major.data(), row_major.size());
    std::ostringstream meta;
    meta << "dims: " << features.rows() << ' ' << features.cols() << '\n'
         << "dtype: float32\n"
         << "order: row-major\n";
    util::write_file(path + ".meta", meta.str());
}

Mat read_features(const std::string& path) {
    auto dims = sidecar_dims(path);
    if (dims.size() != 2) throw ParseError("expected 2 dims for features: " + path);
    auto buf = read_raw_f32(path, static_cast<size_t>(dims[0] * dims[1]));
    Mat m(dims[0], dims[1]);
    size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = buf[k++];
    return m;
}

SplitIndices stratified_split(const std::vector<int>& labels, double f_train,
                              double f_val, double f_test, uint64_t seed) {
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw InvalidSpec("split fractions must sum to 1");
    if (f_train < 0 || f_val < 0 || f_test < 0)
        throw InvalidSpec("split fractions must be non-negative");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    SplitIndices out;
    Rng rng(seed);
    for (int c = 0; c <= max_label; ++c) {
        std::vector<size_t> members;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) members.push_back(i);
        Rng crng = rng.fork(static_cast<uint64_t>(c));
        auto perm = crng.permutation(members.size());
        const size_t n = members.size();
        size_t n_train = static_cast<size_t>(std::llround(f_train * static_cast<double>(n)));
        size_t n_val = static_cast<size_t>(std::llround(f_val * static_cast<double>(n)));
        n_train = std::min(n_train, n);
        n_val = std::min(n_val, n - n_train);
        for (size_t k = 0; k < n; ++k) {
            size_t idx = members[perm[k]];
            if (k < n_train)
                out.train.push_back(idx);
            else if (k < n_train + n_val)
                out.val.push_back(idx);
            else
                out.test.push_back(idx);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

void SynthSpec::validate() const {
    if (static_cast<int>(counts.size()) != n_classes)
        throw InvalidSpec("counts size must equal the class count");
    for (int c : counts)
        if (c <= 0) throw InvalidSpec("per-class counts must be positive");
    if (n_classes != 2 && n_classes != 3) throw InvalidSpec("classes must be 2 or 3");
    if (vol < 4) throw InvalidSpec("volume edge too small");
    if (noise < 0) throw InvalidSpec("noise must be non-negative");
    if (confound) {
        if (rho_train < 0 || rho_train > 1 || rho_test < 0 || rho_test > 1)
            throw InvalidSpec("rho must lie in [0, 1]");
        if (confound_class >= n_classes) throw InvalidSpec("confound class out of range");
    }
    if (!planted_tokens.empty() &&
        static_cast<int>(planted_tokens.size()) != n_classes)
        throw InvalidSpec("planted_tokens must have one token per class");
    if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw InvalidSpec("split fractions must sum to 1");
}

namespace {

struct TemplateBank {
    std::vector<std::string> history = {
        "No prior stroke or head trauma reported.",
        "Hypertension managed with routine medication.",
        "Family history includes late onset dementia in one relative.",
    };
    std::vector<std::string> physical = {
        "Gait and balance within the expected range for age.",
        "Mild joint stiffness reported in the morning.",
        "Blood pressure and weight stable across recent visits.",
    };
    std::vector<std::string> behavior = {
        "Keeps regular sleep and meal schedules.",
        "Participates in weekly social activities.",
        "Manages household tasks with minimal assistance.",
    };
    std::vector<std::string> language = {
        "Fluent speech with an ordinary vocabulary range.",
        "Occasionally searches for uncommon words.",
        "Reads the newspaper daily without difficulty.",
    };
};

std::string keyword_sentence(const std::string& token, int cls, int n_classes) {
    // severity index in [0, 1] across the class set
    double s = n_classes > 1 ? static_cast<double>(cls) / (n_classes - 1) : 0.0;
    if (s < 0.25)
        return "Assessment shows " + token + " with intact recall and orientation.";
    if (s < 0.75)
        return "Assessment shows occasional " + token + " in short term recall.";
    return "Assessment shows " + token + " disorientation with marked memory decline.";
}

std::string make_summary(const std::string& id, int cls, int n_classes,
                         const SynthSpec& spec, bool artifact, Rng& rng) {
    const TemplateBank bank;
    const auto pick = [&rng](const std::vector<std::string>& pool) {
        return pool[rng.uniform_index(pool.size())];
    };
    int age = 62 + 6 * cls + static_cast<int>(rng.uniform_index(9));
    const char* sex = rng.bernoulli(0.5) ? "female" : "male";
    int edu = 8 + static_cast<int>(rng.uniform_index(12));

    std::ostringstream out;
    out << "Basic Information:\n"
        << "Participant " << id << " is a " << age << " year old " << sex
        << " volunteer with " << edu << " years of education.\n";
    if (artifact)
        out << "Scan acquired at the " << spec.confound_token << " imaging suite.\n";
    out << "Medical History and Neurological Assessment:\n" << pick(bank.history);
    if (spec.class_keywords) {
        const auto& tokens = spec.planted_tokens;
        out << ' ' << keyword_sentence(tokens[static_cast<size_t>(cls)], cls, n_classes);
    } else {
        out << " Assessment recorded without notable remarks.";
    }
    out << '\n'
        << "Physical status:\n"
        << pick(bank.physical) << '\n'
        << "Daily Behavior:\n"
        << pick(bank.behavior) << '\n'
        << "Language proficiency:\n"
        << pick(bank.language) << '\n';
    return out.str();
}

VolumeGrid make_volume(int edge, int cls, int n_classes, const SynthSpec& spec,
                       bool artifact, Rng& rng) {
    VolumeGrid vol;
    vol.h = vol.w = vol.d = edge;
    vol.voxels.assign(static_cast<size_t>(edge) * edge * edge, 0.0);
    double severity = n_classes > 1 ? static_cast<double>(cls) / (n_classes - 1) : 0.0;
    if (!spec.class_visual_signal) severity = 0.5;
    const double sigma = edge * (0.10 + 0.08 * severity);
    const double intensity = 0.6 + 0.5 * severity;
    const double c = (edge - 1) / 2.0;
    for (int z = 0; z < edge; ++z)
        for (int y = 0; y < edge; ++y)
            for (int x = 0; x < edge; ++x) {
                double r2 = (x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c);
                double v = intensity * std::exp(-r2 / (2.0 * sigma * sigma));
                vol.at(x, y, z) = v + spec.noise * rng.normal();
            }
    if (artifact) {
        const int side = std::max(2, edge / 8);
        for (int z = 0; z < side; ++z)
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) vol.at(x, y, z) = 1.5;
    }
    return vol;
}

std::string lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace

SynthResult synth_dataset(const SynthSpec& spec_in, const std::string& out_dir) {
    SynthSpec spec = spec_in;
    spec.validate();
    if (spec.planted_tokens.empty()) {
        spec.planted_tokens = spec.n_classes == 3
                                  ? std::vector<std::string>{"steadiness", "lapses",
                                                             "hallmark"}
                                  : std::vector<std::string>{"steadiness", "hallmark"};
    }
    const int designated =
        spec.confound_class < 0 ? spec.n_classes - 1 : spec.confound_class;

    fs::create_directories(fs::path(out_dir) / "volumes");
    fs::create_directories(fs::path(out_dir) / "summaries");

    std::vector<int> labels;
    for (int c = 0; c < spec.n_classes; ++c)
        labels.insert(labels.end(), static_cast<size_t>(spec.counts[static_cast<size_t>(c)]), c);

    SplitIndices split = stratified_split(labels, spec.split_train, spec.split_val,
                                          spec.split_test, spec.seed);
    std::vector<int> split_of(labels.size(), 0);  // 0 train, 1 val, 2 test
    for (size_t i : split.val) split_of[i] = 1;
    for (size_t i : split.test) split_of[i] = 2;

    Rng base(spec.seed);
    std::vector<SampleRecord> records;
    const auto& names = class_names(spec.n_classes);
    std::vector<int> class_counter(static_cast<size_t>(spec.n_classes), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const int cls = labels[i];
        char idbuf[64];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%04d",
                      lower(names[static_cast<size_t>(cls)]).c_str(),
                      class_counter[static_cast<size_t>(cls)]++);
        const std::string id = idbuf;
        Rng rng = base.fork(i);

        bool artifact = false;
        if (spec.confound) {
            const double rho = split_of[i] == 2 ? spec.rho_test : spec.rho_train;
            artifact = cls == designated ? rng.bernoulli(rho) : rng.bernoulli(1.0 - rho);
        }

        VolumeGrid vol = make_volume(spec.vol, cls, spec.n_classes, spec, artifact, rng);
        const std::string vol_rel = "volumes/" + id + ".f32";
        write_volume((fs::path(out_dir) / vol_rel).string(), vol);

        const std::string summary =
            make_summary(id, cls, spec.n_classes, spec, artifact, rng);
        const std::string sum_rel = "summaries/" + id + ".txt";
        util::write_file((fs::path(out_dir) / sum_rel).string(), summary);

        records.push_back(SampleRecord{id, vol_rel, sum_rel,
                                       names[static_cast<size_t>(cls)]});
    }

    SynthResult result;
    result.n_samples = static_cast<int>(records.size());
    auto manifest_path = [&](const std::string& name) {
        return (fs::path(out_dir) / name).string();
    };
    auto subset = [&](const std::vector<size_t>& idx) {
        std::vector<SampleRecord> out;
        for (size_t i : idx) out.push_back(records[i]);
        return out;
    };
    result.manifest_all = manifest_path("manifest.jsonl");
    result.manifest_train = manifest_path("manifest_train.jsonl");
    result.manifest_val = manifest_path("manifest_val.jsonl");
    result.manifest_test = manifest_path("manifest_test.jsonl");
    save_manifest(result.manifest_all, records);
    save_manifest(result.manifest_train, subset(split.train));
    save_manifest(result.manifest_val, subset(split.val));
    save_manifest(result.manifest_test, subset(split.test));
    return result;
}

}  // namespace adpc::data
