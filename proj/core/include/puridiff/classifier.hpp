#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "puridiff/dataset.hpp"
#include "puridiff/nn.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

enum class ClassifierArch { mlp, small_conv };

const char* classifier_arch_name(ClassifierArch a);
ClassifierArch classifier_arch_from_name(const std::string& name);

// f(.;theta), small and smooth on purpose: silu activations keep both the
// attack gradients and the guidance gradients defined everywhere.
struct ClassifierModel {
    ClassifierArch arch = ClassifierArch::mlp;
    int class_count = 0;
    Shape input_shape;  // per-sample shape
    uint64_t seed = 0;
    ParamSet params;

    // mlp: flatten -> 64 -> 64 -> C
    Dense fc1, fc2, fc3;
    // small_conv: 3x3 conv(1->8) -> pool -> 3x3 conv(8->16) -> pool -> dense
    Conv3x3 conv1, conv2;
    Dense head;

    // Tape-enabled forward; batch is (B, ...) matching input_shape.
    Tensor logits_t(const Tensor& batch) const;
    std::vector<int> predict(const Tensor& batch) const;  // no-grad argmax
};

ClassifierModel make_classifier(ClassifierArch arch, Shape input_shape, int class_count,
                                uint64_t seed);

struct TrainReport {
    std::vector<double> epoch_losses;
    double final_train_accuracy = 0.0;
    double final_test_accuracy = 0.0;
    uint64_t seed = 0;
};

struct TrainOptions {
    double learning_rate = 0.05;
    int batch_size = 64;
    double holdout_fraction = 0.2;
};

std::pair<ClassifierModel, TrainReport> train_classifier(const LabeledDataset& data,
                                                         ClassifierArch arch, int epochs,
                                                         uint64_t seed,
                                                         const TrainOptions& opts = {});

// No-grad logits for a batch; (B, C), finite.
Tensor logits(const ClassifierModel& model, const Tensor& batch);

// Exact gradient of the mean cross-entropy wrt the input batch.
std::pair<double, Tensor> loss_and_input_grad(const ClassifierModel& model, const Tensor& x,
                                              const std::vector<int>& y);

int argmax_row(const Tensor& logits, int row);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace puridiff
