#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puridiff/classifier.hpp"
#include "puridiff/dataset.hpp"
#include "puridiff/diffusion.hpp"

namespace puridiff {

// Datasets persist as a two-file pair: <prefix>.json manifest plus
// <prefix>.bin holding the f32le sample array in row-major order with
// i32le labels appended at the offset declared in the manifest.
void save_dataset(const LabeledDataset& data, const std::string& prefix);
LabeledDataset load_dataset(const std::string& prefix);

// Checkpoints: JSON manifest (architecture, shapes, parameter names, seed,
// schedule for diffusion models) plus raw f32le parameter blobs in
// manifest order.
void save_classifier(const ClassifierModel& model, const std::string& prefix);
ClassifierModel load_classifier(const std::string& prefix);
void save_diffusion(const DiffusionModel& model, const std::string& prefix);
DiffusionModel load_diffusion(const std::string& prefix);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
uint64_t hash_file(const std::string& path);
std::string hex64(uint64_t v);
void ensure_directory(const std::string& path);

}  // namespace puridiff
