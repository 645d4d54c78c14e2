#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "phonssm/graph.hpp"
#include "phonssm/rng.hpp"
#include "phonssm/tensor.hpp"

namespace phonssm {

inline constexpr std::array<int, 4> kNoPhonLabels = {-1, -1, -1, -1};

/// Unprocessed landmark recording of arbitrary length.
struct RawSequence {
    LandmarkLayout layout;
    Tensor frames;  // [F × N × 3]
    std::string source_id;
    std::array<int, 4> phon = kNoPhonLabels;
};

/// Compositional benchmark description; a class is one value tuple.
struct SyntheticSpec {
    std::array<int, 4> inventory = {6, 5, 4, 3};  // (m_hand, m_loc, m_mov, m_ori)
    int samples_per_class = 20;
    double noise_sigma = 0.02;
    double train_fraction = 0.6;  // fraction of tuples seen in training
    std::uint64_t seed = 0;
    int frames = 30;
};

struct DatasetRecord {
    int label = 0;
    std::array<int, 4> phon = kNoPhonLabels;
    Tensor coords;  // [T × N × 3]
};

struct DatasetFile {
    std::uint32_t version = 1;
    LandmarkLayout layout;
    int t = 30;
    int k = 0;  // number of classes in the label space
    bool has_phon = false;
    std::array<int, 4> inventory = {0, 0, 0, 0};  // zeros when not synthetic
    std::vector<DatasetRecord> records;
};

struct SyntheticDataset {
    DatasetFile train;
    DatasetFile test_seen;
    DatasetFile test_unseen;
    std::vector<std::string> label_names;                // index -> name
    std::vector<std::array<int, 4>> class_tuples;        // index -> component values
    std::vector<int> seen_classes, unseen_classes;
};

/// Wrist-center and palm-normalize every frame, then resample the time axis
/// to target_t with linear interpolation (endpoints preserved). Palm size is
/// the mean wrist-to-knuckle distance of the frame.
LandmarkSequence preprocess(const RawSequence& raw, int target_t = 30);

/// Random temporal shift in [-3, 3] frames (edge replication) and global
/// scale jitter in [0.9, 1.1].
Tensor augment(const Tensor& coords, Rng& rng);
LandmarkSequence augment(const LandmarkSequence& seq, Rng& rng);
Tensor augment_shift_scale(const Tensor& coords, int shift, double scale);

/// Pick the hand block with the larger total frame-to-frame displacement;
/// ties go to the right hand. All-zero blocks count as missing.
Tensor select_dominant_hand(const Tensor& pose_seq);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

int class_id_of(const std::array<int, 4>& tuple, const std::array<int, 4>& inventory);
std::array<int, 4> tuple_of_class(int class_id, const std::array<int, 4>& inventory);

void write_dataset(const DatasetFile& ds, const std::string& path);
DatasetFile read_dataset(const std::string& path);

void write_label_map(const std::vector<std::string>& names, const std::string& path);
std::vector<std::string> read_label_map(const std::string& path);

}  // namespace phonssm
