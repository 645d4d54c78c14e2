#include "phonssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "phonssm/errors.hpp"

namespace phonssm {

using nlohmann::json;

namespace {

constexpr int kPalmJoints[4] = {5, 9, 13, 17};  // index..pinky knuckles

double palm_size(const double* frame, int wrist) {
    double acc = 0.0;
    for (int j : kPalmJoints) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double dv = frame[(wrist + j) * 3 + c] - frame[wrist * 3 + c];
            d2 += dv * dv;
        }
        acc += std::sqrt(d2);
    }
    return acc / 4.0;
}

}  // namespace

LandmarkSequence preprocess(const RawSequence& raw, int target_t) {
    if (raw.frames.rank() != 3 || raw.frames.dim(0) < 1)
        throw std::invalid_argument("preprocess: need at least one frame");
    if (raw.frames.dim(1) != raw.layout.node_count || raw.frames.dim(2) != 3)
        throw std::invalid_argument("preprocess: frame shape does not match layout");
    const int f_in = raw.frames.dim(0), n = raw.layout.node_count;
    // the 75-landmark layout is centered on the right-hand wrist block
    const int wrist = raw.layout.kind == LayoutKind::DominantHand21 ? 0 : kRightHandOffset;

    Tensor normed({f_in, n, 3});
    for (int f = 0; f < f_in; ++f) {
        const double* src = raw.frames.data() + static_cast<std::size_t>(f) * n * 3;
        const double psize = palm_size(src, wrist);
        if (psize <= 1e-9)
            throw degenerate_input("preprocess: degenerate palm in frame " + std::to_string(f));
        double* dst = normed.data() + static_cast<std::size_t>(f) * n * 3;
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < 3; ++c)
                dst[j * 3 + c] = (src[j * 3 + c] - src[wrist * 3 + c]) / psize;
    }

    LandmarkSequence out;
    out.layout = raw.layout;
    out.coords = Tensor({target_t, n, 3});
    for (int t = 0; t < target_t; ++t) {
        double pos;
        if (target_t == 1)
            pos = 0.0;
        else if (t == target_t - 1)
            pos = static_cast<double>(f_in - 1);  // endpoint exact
        else
            pos = static_cast<double>(t) * (f_in - 1) / (target_t - 1);
        const int lo = static_cast<int>(pos);
        const int hi = std::min(lo + 1, f_in - 1);
        const double w = pos - lo;
        const double* a = normed.data() + static_cast<std::size_t>(lo) * n * 3;
        const double* b = normed.data() + static_cast<std::size_t>(hi) * n * 3;
        double* dst = out.coords.data() + static_cast<std::size_t>(t) * n * 3;
        for (int i = 0; i < n * 3; ++i) dst[i] = w == 0.0 ? a[i] : a[i] + w * (b[i] - a[i]);
    }
    return out;
}

Tensor augment_shift_scale(const Tensor& coords, int shift, double scale) {
    if (coords.rank() != 3) throw std::invalid_argument("augment: rank-3 coords required");
    const int t_len = coords.dim(0), n = coords.dim(1);
    Tensor out({t_len, n, 3});
    for (int t = 0; t < t_len; ++t) {
        const int src = std::clamp(t - shift, 0, t_len - 1);  // edge replication
        const double* a = coords.data() + static_cast<std::size_t>(src) * n * 3;
        double* dst = out.data() + static_cast<std::size_t>(t) * n * 3;
        for (int i = 0; i < n * 3; ++i) dst[i] = a[i] * scale;
    }
    return out;
}

Tensor augment(const Tensor& coords, Rng& rng) {
    const int shift = static_cast<int>(rng.uniform_int(-3, 3));
    const double scale = rng.uniform(0.9, 1.1);
    return augment_shift_scale(coords, shift, scale);
}

LandmarkSequence augment(const LandmarkSequence& seq, Rng& rng) {
    LandmarkSequence out;
    out.layout = seq.layout;
    out.coords = augment(seq.coords, rng);
    return out;
}

namespace {
bool block_all_zero(const Tensor& seq, int offset) {
    for (int t = 0; t < seq.dim(0); ++t)
        for (int j = 0; j < kHandNodeCount; ++j)
            for (int c = 0; c < 3; ++c)
                if (seq.at(t, offset + j, c) != 0.0) return false;
    return true;
}

double hand_displacement(const Tensor& seq, int offset) {
    double acc = 0.0;
    for (int t = 0; t + 1 < seq.dim(0); ++t)
        for (int j = 0; j < kHandNodeCount; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double dv = seq.at(t + 1, offset + j, c) - seq.at(t, offset + j, c);
                d2 += dv * dv;
            }
            acc += std::sqrt(d2);
        }
    return acc;
}

Tensor extract_hand(const Tensor& seq, int offset) {
    Tensor out({seq.dim(0), kHandNodeCount, 3});
    for (int t = 0; t < seq.dim(0); ++t)
        for (int j = 0; j < kHandNodeCount; ++j)
            for (int c = 0; c < 3; ++c) out.at(t, j, c) = seq.at(t, offset + j, c);
    return out;
}
}  // namespace

Tensor select_dominant_hand(const Tensor& pose_seq) {
    if (pose_seq.rank() != 3 || pose_seq.dim(1) != 75 || pose_seq.dim(2) != 3)
        throw std::invalid_argument("select_dominant_hand: T×75×3 input required");
    const bool left_missing = block_all_zero(pose_seq, kLeftHandOffset);
    const bool right_missing = block_all_zero(pose_seq, kRightHandOffset);
    if (left_missing && right_missing)
        throw degenerate_input("select_dominant_hand: both hands missing");
    if (left_missing) return extract_hand(pose_seq, kRightHandOffset);
    if (right_missing) return extract_hand(pose_seq, kLeftHandOffset);
    const double dl = hand_displacement(pose_seq, kLeftHandOffset);
    const double dr = hand_displacement(pose_seq, kRightHandOffset);
    // ties go right
    return dl > dr ? extract_hand(pose_seq, kLeftHandOffset)
                   : extract_hand(pose_seq, kRightHandOffset);
}

int class_id_of(const std::array<int, 4>& tuple, const std::array<int, 4>& inventory) {
    int id = 0;
    for (int i = 0; i < 4; ++i) {
        if (tuple[static_cast<std::size_t>(i)] < 0 ||
            tuple[static_cast<std::size_t>(i)] >= inventory[static_cast<std::size_t>(i)])
            throw std::invalid_argument("class_id_of: tuple value out of range");
        id = id * inventory[static_cast<std::size_t>(i)] + tuple[static_cast<std::size_t>(i)];
    }
    return id;
}

std::array<int, 4> tuple_of_class(int class_id, const std::array<int, 4>& inventory) {
    std::array<int, 4> t{};
    for (int i = 3; i >= 0; --i) {
        t[static_cast<std::size_t>(i)] = class_id % inventory[static_cast<std::size_t>(i)];
        class_id /= inventory[static_cast<std::size_t>(i)];
    }
    return t;
}

namespace {

// Canonical open hand: wrist at the origin, fingers fanned in the x-y plane.
Tensor canonical_hand() {
    Tensor h({kHandNodeCount, 3});
    const double spread[5] = {-0.9, -0.35, 0.0, 0.3, 0.6};   // thumb..pinky fan angle
    const double length[5] = {0.65, 1.0, 1.08, 1.0, 0.82};   // relative finger length
    const double radii[4] = {0.35, 0.58, 0.76, 0.9};
    for (int f = 0; f < 5; ++f) {
        const double ca = std::cos(spread[f]), sa = std::sin(spread[f]);
        for (int j = 0; j < 4; ++j) {
            const int idx = 1 + 4 * f + j;
            const double r = radii[j] * length[f];
            h.at(idx, 0) = r * sa;
            h.at(idx, 1) = r * ca;
            h.at(idx, 2) = 0.04 * j;  // slight curl out of plane
        }
    }
    return h;
}

struct Templates {
    std::vector<Tensor> hand_shapes;               // per value: [21×3] offsets incl. base
    std::vector<std::array<double, 3>> locations;  // per value: translation
    std::vector<std::vector<std::array<double, 3>>> movements;  // per value: per-frame offset
    std::vector<Tensor> rotations;                 // per value: [3×3]
};

Tensor rotation_matrix(double ax, double ay, double az, double angle) {
    const double n = std::sqrt(ax * ax + ay * ay + az * az);
    ax /= n;
    ay /= n;
    az /= n;
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    Tensor r({3, 3});
    r.at(0, 0) = t * ax * ax + c;
    r.at(0, 1) = t * ax * ay - s * az;
    r.at(0, 2) = t * ax * az + s * ay;
    r.at(1, 0) = t * ax * ay + s * az;
    r.at(1, 1) = t * ay * ay + c;
    r.at(1, 2) = t * ay * az - s * ax;
    r.at(2, 0) = t * ax * az - s * ay;
    r.at(2, 1) = t * ay * az + s * ax;
    r.at(2, 2) = t * az * az + c;
    return r;
}

double triangle_wave(double x) {  // period 1, range [-1, 1]
    const double u = x - std::floor(x + 0.5);
    return 4.0 * std::fabs(u) - 1.0;
}

Templates build_templates(const SyntheticSpec& spec) {
    Templates tp;
    const Tensor base = canonical_hand();
    for (int v = 0; v < spec.inventory[0]; ++v) {
        // handshapes differ in per-finger extension and curl, so the shape
        // signature survives the orientation rotation (joint distances are
        // rotation invariant); realized as static per-landmark offsets
        Rng rng(substream(spec.seed, "tmpl-hand", static_cast<std::uint64_t>(v)));
        Tensor shape = base;
        for (int f = 0; f < 5; ++f) {
            const double extension = rng.uniform(0.45, 1.45);
            const double curl = rng.uniform(-0.35, 0.55);
            const double splay = rng.uniform(-0.25, 0.25);
            for (int j = 0; j < 4; ++j) {
                const int idx = 1 + 4 * f + j;
                const double along = (j + 1) / 4.0;
                shape.at(idx, 0) = base.at(idx, 0) * extension + splay * along;
                shape.at(idx, 1) = base.at(idx, 1) * extension;
                shape.at(idx, 2) = base.at(idx, 2) + curl * along * along;
            }
        }
        for (int j = 1; j < kHandNodeCount; ++j)
            for (int c = 0; c < 3; ++c) shape.at(j, c) += rng.normal(0.0, 0.03);
        tp.hand_shapes.push_back(std::move(shape));
    }
    // factor scales are balanced so that no single component dominates the
    // coordinates; each one alone stays decodable under the noise levels
    // used by the benchmark
    for (int v = 0; v < spec.inventory[1]; ++v) {
        Rng rng(substream(spec.seed, "tmpl-loc", static_cast<std::uint64_t>(v)));
        tp.locations.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                                rng.uniform(-0.5, 0.5)});
    }
    for (int v = 0; v < spec.inventory[2]; ++v) {
        Rng rng(substream(spec.seed, "tmpl-mov", static_cast<std::uint64_t>(v)));
        const int family = v % 5;  // line, arc, circle, zigzag, still
        double d1[3], d2[3];
        for (double* d : {d1, d2}) {
            double nrm = 0.0;
            for (int c = 0; c < 3; ++c) {
                d[c] = rng.normal();
                nrm += d[c] * d[c];
            }
            nrm = std::sqrt(nrm);
            for (int c = 0; c < 3; ++c) d[c] /= nrm;
        }
        const double amp = family == 4 ? 0.0 : rng.uniform(0.6, 1.0);
        std::vector<std::array<double, 3>> traj(static_cast<std::size_t>(spec.frames));
        for (int t = 0; t < spec.frames; ++t) {
            const double u = spec.frames == 1 ? 0.0 : static_cast<double>(t) / (spec.frames - 1);
            std::array<double, 3> o{0.0, 0.0, 0.0};
            switch (family) {
                case 0:  // line
                    for (int c = 0; c < 3; ++c) o[static_cast<std::size_t>(c)] = d1[c] * amp * (u - 0.5);
                    break;
                case 1:  // arc
                    for (int c = 0; c < 3; ++c)
                        o[static_cast<std::size_t>(c)] =
                            d1[c] * amp * (u - 0.5) + d2[c] * amp * 0.5 * (4.0 * u * (1.0 - u));
                    break;
                case 2: {  // circle
                    const double th = 6.283185307179586 * u;
                    for (int c = 0; c < 3; ++c)
                        o[static_cast<std::size_t>(c)] =
                            amp * 0.5 * ((std::cos(th) - 1.0) * d1[c] + std::sin(th) * d2[c]);
                    break;
                }
                case 3:  // zigzag
                    for (int c = 0; c < 3; ++c)
                        o[static_cast<std::size_t>(c)] = d1[c] * amp * 0.5 * triangle_wave(3.0 * u);
                    break;
                default:  // still
                    break;
            }
            traj[static_cast<std::size_t>(t)] = o;
        }
        tp.movements.push_back(std::move(traj));
    }
    for (int v = 0; v < spec.inventory[3]; ++v) {
        // moderate, well-separated palm tilts: orientation stays its own
        // decodable factor without scrambling the shape signature
        Rng rng(substream(spec.seed, "tmpl-ori", static_cast<std::uint64_t>(v)));
        const double angle = 0.3 + 0.45 * v + rng.uniform(-0.06, 0.06);
        double ax = rng.normal(0.0, 0.35), ay = rng.normal(0.0, 0.35), az = 1.0;
        tp.rotations.push_back(rotation_matrix(ax, ay, az, angle));
    }
    return tp;
}

DatasetRecord make_sample(const SyntheticSpec& spec, const Templates& tp, int class_id,
                          const std::array<int, 4>& tuple, Rng& noise_rng) {
    DatasetRecord rec;
    rec.label = class_id;
    rec.phon = tuple;
    rec.coords = Tensor({spec.frames, kHandNodeCount, 3});
    const Tensor& shape = tp.hand_shapes[static_cast<std::size_t>(tuple[0])];
    const auto& loc = tp.locations[static_cast<std::size_t>(tuple[1])];
    const auto& traj = tp.movements[static_cast<std::size_t>(tuple[2])];
    const Tensor& rot = tp.rotations[static_cast<std::size_t>(tuple[3])];
    for (int t = 0; t < spec.frames; ++t)
        for (int j = 0; j < kHandNodeCount; ++j) {
            double p[3];
            for (int c = 0; c < 3; ++c)
                p[c] = rot.at(c, 0) * shape.at(j, 0) + rot.at(c, 1) * shape.at(j, 1) +
                       rot.at(c, 2) * shape.at(j, 2);
            for (int c = 0; c < 3; ++c)
                rec.coords.at(t, j, c) = p[c] + loc[static_cast<std::size_t>(c)] +
                                         traj[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] +
                                         spec.noise_sigma * noise_rng.normal();
        }
    return rec;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    for (int m : spec.inventory)
        if (m < 2) throw std::invalid_argument("generate_synthetic: inventory sizes must be >= 2");
    if (spec.noise_sigma < 0.0)
        throw std::invalid_argument("generate_synthetic: noise sigma must be >= 0");
    if (spec.train_fraction <= 0.0 || spec.train_fraction > 1.0)
        throw std::invalid_argument("generate_synthetic: train fraction must be in (0, 1]");
    if (spec.samples_per_class < 1 || spec.frames < 1)
        throw std::invalid_argument("generate_synthetic: bad sample or frame count");

    int k = 1;
    for (int m : spec.inventory) k *= m;
    const Templates tp = build_templates(spec);

    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(substream(spec.seed, "split"));
    for (int i = k - 1; i > 0; --i) {
        const int j = static_cast<int>(split_rng.uniform_int(0, i));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const int n_seen = static_cast<int>(std::llround(spec.train_fraction * k));

    SyntheticDataset out;
    out.seen_classes.assign(order.begin(), order.begin() + n_seen);
    out.unseen_classes.assign(order.begin() + n_seen, order.end());
    std::sort(out.seen_classes.begin(), out.seen_classes.end());
    std::sort(out.unseen_classes.begin(), out.unseen_classes.end());

    // every component value must be seen in training (otherwise unseen
    // tuples contain values with no training signal at all)
    for (int axis = 0; axis < 4; ++axis) {
        std::set<int> seen_vals;
        for (int c : out.seen_classes)
            seen_vals.insert(tuple_of_class(c, spec.inventory)[static_cast<std::size_t>(axis)]);
        if (static_cast<int>(seen_vals.size()) != spec.inventory[static_cast<std::size_t>(axis)])
            throw std::invalid_argument(
                "generate_synthetic: train fraction leaves component values of axis " +
                std::to_string(axis) + " entirely unseen");
    }

    for (int c = 0; c < k; ++c) {
        const auto t = tuple_of_class(c, spec.inventory);
        out.class_tuples.push_back(t);
        out.label_names.push_back("h" + std::to_string(t[0]) + "_l" + std::to_string(t[1]) +
                                  "_m" + std::to_string(t[2]) + "_o" + std::to_string(t[3]));
    }

    auto init_file = [&](DatasetFile& f) {
        f.layout = LandmarkLayout::dominant_hand21();
        f.t = spec.frames;
        f.k = k;
        f.has_phon = true;
        f.inventory = spec.inventory;
    };
    init_file(out.train);
    init_file(out.test_seen);
    init_file(out.test_unseen);

    const int test_per_class = std::max(1, spec.samples_per_class / 4);
    for (int c : out.seen_classes) {
        const auto t = tuple_of_class(c, spec.inventory);
        for (int s = 0; s < spec.samples_per_class; ++s) {
            Rng rng(substream(spec.seed, "train-sample", static_cast<std::uint64_t>(c),
                              static_cast<std::uint64_t>(s)));
            out.train.records.push_back(make_sample(spec, tp, c, t, rng));
        }
        for (int s = 0; s < test_per_class; ++s) {
            Rng rng(substream(spec.seed, "test-sample", static_cast<std::uint64_t>(c),
                              static_cast<std::uint64_t>(s)));
            out.test_seen.records.push_back(make_sample(spec, tp, c, t, rng));
        }
    }
    for (int c : out.unseen_classes) {
        const auto t = tuple_of_class(c, spec.inventory);
        for (int s = 0; s < test_per_class; ++s) {
            Rng rng(substream(spec.seed, "test-sample", static_cast<std::uint64_t>(c),
                              static_cast<std::uint64_t>(s)));
            out.test_unseen.records.push_back(make_sample(spec, tp, c, t, rng));
        }
    }
    return out;
}

// ----- on-disk container -----

namespace {
constexpr char kDatasetMagic[4] = {'P', 'H', 'D', 'S'};
}

void write_dataset(const DatasetFile& ds, const std::string& path) {
    for (const auto& r : ds.records) {
        if (!r.coords.all_finite())
            throw std::invalid_argument("write_dataset: non-finite coordinates");
        if (r.coords.rank() != 3 || r.coords.dim(0) != ds.t ||
            r.coords.dim(1) != ds.layout.node_count)
            throw std::invalid_argument("write_dataset: record shape mismatch");
    }
    json header;
    header["version"] = ds.version;
    header["layout"] =
        ds.layout.kind == LayoutKind::DominantHand21 ? "DominantHand21" : "PoseHands75";
    header["t"] = ds.t;
    header["k"] = ds.k;
    header["node_count"] = ds.layout.node_count;
    header["coord_dims"] = 3;
    header["has_phon"] = ds.has_phon;
    header["inventory"] = ds.inventory;
    header["record_count"] = ds.records.size();
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
    f.write(kDatasetMagic, 4);
    const std::uint32_t ver = ds.version;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    std::vector<float> buf;
    for (const auto& r : ds.records) {
        const std::uint32_t label = static_cast<std::uint32_t>(r.label);
        f.write(reinterpret_cast<const char*>(&label), sizeof(label));
        if (ds.has_phon) {
            std::int32_t phon[4];
            for (int i = 0; i < 4; ++i) phon[i] = r.phon[static_cast<std::size_t>(i)];
            f.write(reinterpret_cast<const char*>(phon), sizeof(phon));
        }
        buf.resize(r.coords.size());
        for (std::size_t i = 0; i < r.coords.size(); ++i)
            buf[i] = static_cast<float>(r.coords[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("write_dataset: write failed for " + path);
}

DatasetFile read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
    auto offset = [&]() -> std::string { return std::to_string(f.tellg()); };
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw format_error("read_dataset: bad magic in " + path);
    std::uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!f || ver != 1)
        throw format_error("read_dataset: unsupported version " + std::to_string(ver));
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f) throw format_error("read_dataset: truncated at byte " + offset());
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw format_error("read_dataset: truncated header at byte " + offset());
    json header;
    try {
        header = json::parse(htext);
    } catch (const std::exception& e) {
        throw format_error(std::string("read_dataset: corrupt header: ") + e.what());
    }

    DatasetFile ds;
    ds.version = ver;
    ds.layout = header.at("layout") == "DominantHand21" ? LandmarkLayout::dominant_hand21()
                                                        : LandmarkLayout::pose_hands75();
    ds.t = header.at("t");
    ds.k = header.at("k");
    ds.has_phon = header.at("has_phon");
    for (int i = 0; i < 4; ++i) ds.inventory[static_cast<std::size_t>(i)] = header.at("inventory")[static_cast<std::size_t>(i)];
    const std::size_t count = header.at("record_count");
    const int n = ds.layout.node_count;
    ds.records.reserve(count);
    std::vector<float> buf(static_cast<std::size_t>(ds.t) * n * 3);
    for (std::size_t r = 0; r < count; ++r) {
        DatasetRecord rec;
        std::uint32_t label = 0;
        f.read(reinterpret_cast<char*>(&label), sizeof(label));
        if (!f)
            throw format_error("read_dataset: truncated record " + std::to_string(r) +
                               " at byte " + offset());
        rec.label = static_cast<int>(label);
        if (ds.has_phon) {
            std::int32_t phon[4];
            f.read(reinterpret_cast<char*>(phon), sizeof(phon));
            if (!f)
                throw format_error("read_dataset: truncated record " + std::to_string(r) +
                                   " at byte " + offset());
            for (int i = 0; i < 4; ++i) rec.phon[static_cast<std::size_t>(i)] = phon[i];
        }
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f)
            throw format_error("read_dataset: truncated record " + std::to_string(r) +
                               " at byte " + offset());
        rec.coords = Tensor({ds.t, n, 3});
        for (std::size_t i = 0; i < buf.size(); ++i) {
            if (!std::isfinite(buf[i]))
                throw format_error("read_dataset: non-finite coordinate in record " +
                                   std::to_string(r));
            rec.coords[i] = static_cast<double>(buf[i]);
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

void write_label_map(const std::vector<std::string>& names, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_label_map: cannot open " + path);
    for (std::size_t i = 0; i < names.size(); ++i) f << i << '\t' << names[i] << '\n';
}

std::vector<std::string> read_label_map(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_label_map: cannot open " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw format_error("read_label_map: malformed line " + std::to_string(names.size()));
        names.push_back(line.substr(tab + 1));
    }
    return names;
}

}  // namespace phonssm
