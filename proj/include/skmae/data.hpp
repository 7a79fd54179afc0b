#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skmae/errors.hpp"
#include "skmae/rng.hpp"
#include "skmae/skeleton.hpp"

namespace skmae {

struct ManifestRecord {
    std::size_t offset = 0;  // byte offset of the line in the source file
    int label = 0;
    std::size_t persons = 0;
    std::size_t frames = 0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::size_t class_count = 0;
    std::string split;
};

// Validated sequences, each padded to two persons.
class Dataset {
   public:
    Dataset() = default;
    Dataset(DatasetManifest manifest, std::vector<SkeletonSequence> sequences)
        : manifest_(std::move(manifest)), sequences_(std::move(sequences)) {}

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return sequences_.size(); }
    bool empty() const { return sequences_.empty(); }
    const SkeletonSequence& at(std::size_t i) const { return sequences_.at(i); }
    const std::vector<SkeletonSequence>& sequences() const { return sequences_; }
    std::vector<SkeletonSequence>& sequences() { return sequences_; }
    std::size_t class_count() const { return manifest_.class_count; }

   private:
    DatasetManifest manifest_;
    std::vector<SkeletonSequence> sequences_;
};

inline void pad_persons(SkeletonSequence& seq) {
    while (seq.persons.size() < 2) seq.persons.emplace_back(seq.frames * seq.joints * 2, 0.0);
}

namespace detail {

inline SkeletonSequence parse_record(const nlohmann::json& j, const SkeletonLayout& layout) {
    using nlohmann::json;
    if (!j.is_object()) throw DataError("record is not a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "label" && it.key() != "persons" && it.key() != "confidence") {
            throw DataError("unknown key '" + it.key() + "'");
        }
    }
    if (!j.contains("label") || !j["label"].is_number_integer()) throw DataError("missing integer 'label'");
    if (!j.contains("persons") || !j["persons"].is_array()) throw DataError("missing 'persons' array");
    SkeletonSequence seq;
    seq.label = j["label"].get<int>();
    seq.joints = layout.joint_count;
    const auto& persons = j["persons"];
    if (persons.empty() || persons.size() > 2) {
        throw ValidationError("person count " + std::to_string(persons.size()) + " outside {1, 2}");
    }
    seq.frames = persons[0].size();
    if (seq.frames == 0) throw ValidationError("sequence has no frames");
    for (const auto& person : persons) {
        if (!person.is_array() || person.size() != seq.frames) {
            throw ValidationError("persons disagree on frame count");
        }
        std::vector<double> flat;
        flat.reserve(seq.frames * seq.joints * 2);
        for (std::size_t t = 0; t < seq.frames; ++t) {
            const auto& frame = person[t];
            if (!frame.is_array() || frame.size() != layout.joint_count) {
                throw ValidationError("joint count mismatch: frame has " + std::to_string(frame.size()) +
                                          " joints, layout expects N = " + std::to_string(layout.joint_count),
                                      t);
            }
            for (std::size_t k = 0; k < frame.size(); ++k) {
                const auto& xy = frame[k];
                if (!xy.is_array() || xy.size() != 2 || !xy[0].is_number() || !xy[1].is_number()) {
                    throw ValidationError("joint must be an [x, y] number pair", t, k);
                }
                flat.push_back(xy[0].get<double>());
                flat.push_back(xy[1].get<double>());
            }
        }
        seq.persons.push_back(std::move(flat));
    }
    seq.real_persons = seq.persons.size();
    if (j.contains("confidence") && !j["confidence"].is_null()) {
        const auto& c = j["confidence"];
        if (!c.is_array() || c.size() != seq.frames) throw ValidationError("confidence frame count mismatch");
        std::vector<double> conf;
        for (std::size_t t = 0; t < seq.frames; ++t) {
            if (!c[t].is_array() || c[t].size() != layout.joint_count) {
                throw ValidationError("confidence joint count mismatch", t);
            }
            for (const auto& v : c[t]) conf.push_back(v.get<double>());
        }
        seq.confidence = std::move(conf);
    }
    validate_sequence(seq, layout);
    return seq;
}

}  // namespace detail

// Reads a JSONL dataset. class_count 0 infers max(label) + 1.
inline Dataset load_jsonl(const std::filesystem::path& path, const SkeletonLayout& layout,
                          std::size_t class_count = 0, const std::string& split = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open dataset file");
    DatasetManifest manifest;
    manifest.split = split;
    std::vector<SkeletonSequence> sequences;
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t this_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        SkeletonSequence seq;
        try {
            seq = detail::parse_record(nlohmann::json::parse(line), layout);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (seq.label < 0) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": negative label");
        }
        max_label = std::max(max_label, seq.label);
        manifest.records.push_back({this_offset, seq.label, seq.real_persons, seq.frames});
        pad_persons(seq);
        sequences.push_back(std::move(seq));
    }
    if (sequences.empty()) throw DataError(path.string() + ": no records");
    manifest.class_count = class_count ? class_count : static_cast<std::size_t>(max_label + 1);
    if (max_label >= static_cast<int>(manifest.class_count)) {
        throw DataError(path.string() + ": label " + std::to_string(max_label) + " outside [0, " +
                        std::to_string(manifest.class_count) + ")");
    }
    return Dataset(std::move(manifest), std::move(sequences));
}

inline nlohmann::json to_json_record(const SkeletonSequence& seq) {
    nlohmann::json persons = nlohmann::json::array();
    for (std::size_t p = 0; p < seq.real_persons; ++p) {
        nlohmann::json frames = nlohmann::json::array();
        for (std::size_t t = 0; t < seq.frames; ++t) {
            nlohmann::json joints = nlohmann::json::array();
            for (std::size_t j = 0; j < seq.joints; ++j) joints.push_back({seq.at(p, t, j, 0), seq.at(p, t, j, 1)});
            frames.push_back(std::move(joints));
        }
        persons.push_back(std::move(frames));
    }
    nlohmann::json rec = {{"label", seq.label}, {"persons", std::move(persons)}};
    if (seq.confidence) {
        nlohmann::json conf = nlohmann::json::array();
        for (std::size_t t = 0; t < seq.frames; ++t) {
            conf.push_back(std::vector<double>(seq.confidence->begin() + static_cast<std::ptrdiff_t>(t * seq.joints),
                                               seq.confidence->begin() + static_cast<std::ptrdiff_t>((t + 1) * seq.joints)));
        }
        rec["confidence"] = std::move(conf);
    }
    return rec;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<SkeletonSequence>& sequences) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    for (const auto& seq : sequences) out << to_json_record(seq).dump() << '\n';
    if (!out) throw IoError(path.string(), "write failed");
}

// Linear interpolation to `target` frames with endpoints aligned.
inline SkeletonSequence resample_time(const SkeletonSequence& seq, std::size_t target = 64) {
    if (seq.frames == 0 || target == 0) throw ValidationError("resample_time needs at least one frame");
    if (seq.frames == target) return seq;
    SkeletonSequence out = seq;
    out.frames = target;
    const std::size_t row = seq.joints * 2;
    auto lerp_frames = [&](const std::vector<double>& src, std::size_t width) {
        std::vector<double> dst(target * width);
        for (std::size_t k = 0; k < target; ++k) {
            const double u = target == 1 ? 0.0
                                         : static_cast<double>(k) * static_cast<double>(seq.frames - 1) /
                                               static_cast<double>(target - 1);
            const std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(u)), seq.frames - 1);
            const std::size_t i1 = std::min(i0 + 1, seq.frames - 1);
            const double w = u - static_cast<double>(i0);
            for (std::size_t c = 0; c < width; ++c) {
                const double a = src[i0 * width + c], b = src[i1 * width + c];
                dst[k * width + c] = w == 0.0 ? a : a + w * (b - a);
            }
        }
        return dst;
    };
    for (auto& p : out.persons) p = lerp_frames(p, row);
    if (seq.confidence) out.confidence = lerp_frames(*seq.confidence, seq.joints);
    return out;
}

// Per real person: origin at the frame-0 torso centroid, frame-0 bounding-box
// diagonal scaled to 1.
inline SkeletonSequence normalize_coords(const SkeletonSequence& seq, const SkeletonLayout& layout) {
    SkeletonSequence out = seq;
    const JointSet& torso = layout.regions.at(1);
    for (std::size_t p = 0; p < seq.real_persons; ++p) {
        double cx = 0, cy = 0;
        for (auto j : torso) {
            cx += seq.at(p, 0, j, 0);
            cy += seq.at(p, 0, j, 1);
        }
        cx /= static_cast<double>(torso.size());
        cy /= static_cast<double>(torso.size());
        double x0 = seq.at(p, 0, 0, 0), x1 = x0, y0 = seq.at(p, 0, 0, 1), y1 = y0;
        for (std::size_t j = 0; j < seq.joints; ++j) {
            x0 = std::min(x0, seq.at(p, 0, j, 0));
            x1 = std::max(x1, seq.at(p, 0, j, 0));
            y0 = std::min(y0, seq.at(p, 0, j, 1));
            y1 = std::max(y1, seq.at(p, 0, j, 1));
        }
        const double diag = std::hypot(x1 - x0, y1 - y0);
        if (!(diag > 0.0)) throw ValidationError("degenerate pose: all joints coincide in frame 0", 0);
        for (std::size_t t = 0; t < seq.frames; ++t) {
            for (std::size_t j = 0; j < seq.joints; ++j) {
                out.at(p, t, j, 0) = (seq.at(p, t, j, 0) - cx) / diag;
                out.at(p, t, j, 1) = (seq.at(p, t, j, 1) - cy) / diag;
            }
        }
    }
    return out;
}

// Independent Gaussian noise on every coordinate of the real persons.
inline SkeletonSequence pixel_noise(const SkeletonSequence& seq, double sigma, Rng& rng) {
    if (sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
    if (sigma == 0.0) return seq;
    SkeletonSequence out = seq;
    for (std::size_t p = 0; p < seq.real_persons; ++p) {
        for (auto& v : out.persons[p]) v += sigma * rng.normal();
    }
    return out;
}

// Resample then normalize; the form every model consumes.
inline SkeletonSequence prepare_sequence(const SkeletonSequence& seq, const SkeletonLayout& layout,
                                         std::size_t frames) {
    return normalize_coords(resample_time(seq, frames), layout);
}

inline Dataset prepare_dataset(const Dataset& ds, const SkeletonLayout& layout, std::size_t frames) {
    std::vector<SkeletonSequence> out;
    out.reserve(ds.size());
    for (const auto& s : ds.sequences()) out.push_back(prepare_sequence(s, layout, frames));
    return Dataset(ds.manifest(), std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic action generator: each class oscillates exactly one body region
// around a fixed rest pose.

struct SynthSpec {
    std::size_t class_count = 4;
    std::size_t sequences_per_class = 50;
    std::size_t frames = 32;
    double noise_sigma = 1.0;  // pixels
    std::vector<std::size_t> active_regions;  // per class; empty = default {2, 3, 4, 5, 0, 1}
    std::uint64_t seed = 0;

    std::vector<std::size_t> regions() const {
        if (!active_regions.empty()) return active_regions;
        static constexpr std::array<std::size_t, 6> kDefault{2, 3, 4, 5, 0, 1};
        return {kDefault.begin(), kDefault.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(class_count, 6))};
    }
};

struct SyntheticSplit {
    std::vector<SkeletonSequence> train;
    std::vector<SkeletonSequence> test;
};

// Standing COCO-17 rest pose in pixels (y grows downward).
inline const std::array<std::array<double, 2>, kCocoJoints>& rest_pose() {
    static const std::array<std::array<double, 2>, kCocoJoints> pose{{{0, -160},
                                                                     {-6, -166},
                                                                     {6, -166},
                                                                     {-12, -162},
                                                                     {12, -162},
                                                                     {-30, -130},
                                                                     {30, -130},
                                                                     {-45, -90},
                                                                     {45, -90},
                                                                     {-50, -50},
                                                                     {50, -50},
                                                                     {-20, -40},
                                                                     {20, -40},
                                                                     {-22, 20},
                                                                     {22, 20},
                                                                     {-24, 80},
                                                                     {24, 80}}};
    return pose;
}

inline SyntheticSplit generate_synthetic(const SynthSpec& spec) {
    if (spec.class_count == 0 || spec.sequences_per_class == 0 || spec.frames == 0) {
        throw ConfigError("synthetic spec needs positive class, sequence and frame counts");
    }
    const auto regions = spec.regions();
    if (regions.size() != spec.class_count) {
        throw ConfigError("synthetic spec: " + std::to_string(spec.class_count) +
                          " classes need distinct active regions, at most 6 available");
    }
    for (std::size_t a = 0; a < regions.size(); ++a) {
        if (regions[a] >= kRegionCount) throw ConfigError("synthetic spec: region id out of range");
        for (std::size_t b = a + 1; b < regions.size(); ++b) {
            if (regions[a] == regions[b]) throw ConfigError("synthetic spec: active regions must be distinct");
        }
    }
    const SkeletonLayout layout = build_coco17_layout();
    Rng rng(spec.seed);
    SyntheticSplit split;
    const auto& pose = rest_pose();
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        const JointSet& active = layout.regions[regions[c]];
        const double freq = 1.0 + 0.5 * static_cast<double>(c);  // cycles per sequence
        const double phase = static_cast<double>(c) * std::numbers::pi / 3.0;
        std::vector<SkeletonSequence> cls;
        for (std::size_t s = 0; s < spec.sequences_per_class; ++s) {
            const double cx = rng.uniform(200, 440), cy = rng.uniform(150, 330);
            const double scale = rng.uniform(0.8, 1.2);
            const double amp = rng.uniform(0.8, 1.2) * 18.0;
            const double jitter = rng.uniform(-0.3, 0.3);
            SkeletonSequence seq;
            seq.frames = spec.frames;
            seq.joints = kCocoJoints;
            seq.label = static_cast<int>(c);
            seq.real_persons = 1;
            seq.persons.emplace_back(spec.frames * kCocoJoints * 2, 0.0);
            for (std::size_t t = 0; t < spec.frames; ++t) {
                const double angle = 2.0 * std::numbers::pi * freq * static_cast<double>(t) /
                                         static_cast<double>(spec.frames) +
                                     phase + jitter;
                for (std::size_t j = 0; j < kCocoJoints; ++j) {
                    double x = pose[j][0], y = pose[j][1];
                    if (active.count(j)) {
                        // Distal joints of the region swing further.
                        const auto rank = static_cast<std::size_t>(std::distance(active.begin(), active.find(j))) + 1;
                        x += amp * static_cast<double>(rank) * std::sin(angle);
                        y += 0.6 * amp * static_cast<double>(rank) * std::cos(angle);
                    }
                    seq.at(0, t, j, 0) = cx + scale * x;
                    seq.at(0, t, j, 1) = cy + scale * y;
                }
            }
            if (spec.noise_sigma > 0.0) {
                for (auto& v : seq.persons[0]) v += spec.noise_sigma * rng.normal();
            }
            cls.push_back(std::move(seq));
        }
        rng.shuffle(cls);
        const std::size_t n_train = (cls.size() * 8 + 5) / 10;
        for (std::size_t i = 0; i < cls.size(); ++i) {
            (i < n_train ? split.train : split.test).push_back(std::move(cls[i]));
        }
    }
    return split;
}

// Writes train.jsonl and test.jsonl into dir.
inline void write_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    const SyntheticSplit split = generate_synthetic(spec);
    save_jsonl(dir / "train.jsonl", split.train);
    save_jsonl(dir / "test.jsonl", split.test);
}

inline std::vector<SkeletonSequence> padded(std::vector<SkeletonSequence> seqs) {
    for (auto& s : seqs) pad_persons(s);
    return seqs;
}

}  // namespace skmae
