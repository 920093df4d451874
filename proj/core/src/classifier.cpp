#include "puridiff/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

const char* classifier_arch_name(ClassifierArch a) {
    return a == ClassifierArch::mlp ? "mlp" : "small_conv";
}

ClassifierArch classifier_arch_from_name(const std::string& name) {
    if (name == "mlp") return ClassifierArch::mlp;
    if (name == "small_conv") return ClassifierArch::small_conv;
    throw argument_error("unknown classifier architecture '" + name + "'");
}

namespace {

void check_batch_shape(const Shape& batch, const Shape& input_shape, const char* op) {
    bool ok = batch.size() == input_shape.size() + 1;
    if (ok)
        for (size_t i = 0; i < input_shape.size(); ++i)
            if (batch[i + 1] != input_shape[i]) ok = false;
    if (!ok)
        throw argument_error(std::string(op) + ": batch shape " + shape_str(batch) +
                             " does not match model input " + shape_str(input_shape));
}

}  // namespace

Tensor ClassifierModel::logits_t(const Tensor& batch) const {
    check_batch_shape(batch.shape(), input_shape, "logits");
    int b = batch.shape()[0];
    if (arch == ClassifierArch::mlp) {
        Tensor x = reshape(batch, {b, static_cast<int>(numel(input_shape))});
        x = silu(fc1(x));
        x = silu(fc2(x));
        return fc3(x);
    }
    Tensor x = silu(conv1(batch));
    x = avgpool2(x);
    x = silu(conv2(x));
    x = avgpool2(x);
    int flat = static_cast<int>(x.size() / std::max(1, b));
    return head(reshape(x, {b, flat}));
}

std::vector<int> ClassifierModel::predict(const Tensor& batch) const {
    NoGradGuard ng;
    return argmax_rows(logits_t(batch));
}

ClassifierModel make_classifier(ClassifierArch arch, Shape input_shape, int class_count,
                                uint64_t seed) {
    if (class_count < 1) throw argument_error("make_classifier: class_count must be >= 1");
    ClassifierModel m;
    m.arch = arch;
    m.class_count = class_count;
    m.input_shape = input_shape;
    m.seed = seed;
    Rng rng(derive_seed(seed, "classifier_init"));
    if (arch == ClassifierArch::mlp) {
        int d = static_cast<int>(numel(input_shape));
        m.fc1 = make_dense(m.params, "fc1", d, 64, rng);
        m.fc2 = make_dense(m.params, "fc2", 64, 64, rng);
        m.fc3 = make_dense(m.params, "fc3", 64, class_count, rng, 0.5);
    } else {
        if (input_shape.size() != 3)
            throw argument_error("make_classifier: small_conv requires (1,H,W) inputs");
        int h = input_shape[1], w = input_shape[2];
        if (h % 4 != 0 || w % 4 != 0)
            throw argument_error("make_classifier: small_conv requires sides divisible by 4");
        m.conv1 = make_conv3x3(m.params, "conv1", input_shape[0], 8, rng);
        m.conv2 = make_conv3x3(m.params, "conv2", 8, 16, rng);
        m.head = make_dense(m.params, "head", 16 * (h / 4) * (w / 4), class_count, rng, 0.5);
    }
    m.params.set_trainable(false);
    return m;
}

std::pair<ClassifierModel, TrainReport> train_classifier(const LabeledDataset& data,
                                                         ClassifierArch arch, int epochs,
                                                         uint64_t seed,
                                                         const TrainOptions& opts) {
    data.validate();
    if (epochs < 1) throw argument_error("train_classifier: epochs must be >= 1");

    ClassifierModel model = make_classifier(arch, data.sample_shape(), data.class_count, seed);
    model.params.set_trainable(true);

    Rng rng(derive_seed(seed, "classifier_train"));
    int n = data.size();
    std::vector<int> perm = random_permutation(n, rng);
    int n_test = static_cast<int>(n * opts.holdout_fraction);
    std::vector<int> train_idx(perm.begin(), perm.end() - n_test);
    std::vector<int> test_idx(perm.end() - n_test, perm.end());
    if (train_idx.empty()) train_idx = perm;
    if (test_idx.empty()) test_idx = train_idx;

    SgdOptimizer opt(opts.learning_rate);
    TrainReport report;
    report.seed = seed;

    int n_train = static_cast<int>(train_idx.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> order = random_permutation(n_train, rng);
        double loss_sum = 0.0;
        for (int start = 0; start < n_train; start += opts.batch_size) {
            int stop = std::min(n_train, start + opts.batch_size);
            std::vector<int> idx;
            std::vector<int> ys;
            for (int k = start; k < stop; ++k) {
                idx.push_back(train_idx[order[k]]);
                ys.push_back(data.labels[idx.back()]);
            }
            Tensor xb = data.batch(idx);
            Tensor loss = cross_entropy(model.logits_t(xb), ys);
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw training_error("train_classifier: non-finite loss at epoch " +
                                     std::to_string(epoch + 1));
            loss_sum += lv * (stop - start);
            GradMap grads = backward(loss);
            opt.step(model.params, grads);
        }
        report.epoch_losses.push_back(loss_sum / n_train);
        if (!model.params.all_finite())
            throw training_error("train_classifier: non-finite parameters at epoch " +
                                 std::to_string(epoch + 1));
    }
    model.params.set_trainable(false);

    auto acc_on = [&](const std::vector<int>& idx) {
        if (idx.empty()) return 0.0;
        int correct = 0;
        std::vector<int> preds = model.predict(data.batch(idx));
        for (size_t k = 0; k < idx.size(); ++k)
            if (preds[k] == data.labels[idx[k]]) ++correct;
        return static_cast<double>(correct) / idx.size();
    };
    report.final_train_accuracy = acc_on(train_idx);
    report.final_test_accuracy = acc_on(test_idx);
    return {std::move(model), std::move(report)};
}

Tensor logits(const ClassifierModel& model, const Tensor& batch) {
    NoGradGuard ng;
    Tensor out = model.logits_t(batch);
    check_finite(out, "classifier logits");
    return out;
}

std::pair<double, Tensor> loss_and_input_grad(const ClassifierModel& model, const Tensor& x,
                                              const std::vector<int>& y) {
    if (static_cast<size_t>(x.shape()[0]) != y.size())
        throw argument_error("loss_and_input_grad: batch/label count mismatch");
    Tensor leaf = Tensor::leaf(x.shape(), x.data(), true);
    Tensor loss = cross_entropy(model.logits_t(leaf), y);
    GradMap grads = backward(loss);
    return {loss.item(), grads.grad_or_zeros(leaf)};
}

int argmax_row(const Tensor& lg, int row) {
    int c = lg.shape()[1];
    const auto& v = lg.data();
    int best = 0;
    double bv = v[static_cast<size_t>(row) * c];
    for (int j = 1; j < c; ++j) {
        double x = v[static_cast<size_t>(row) * c + j];
        if (x > bv) {
            bv = x;
            best = j;
        }
    }
    return best;
}

std::vector<int> argmax_rows(const Tensor& lg) {
    std::vector<int> out(lg.shape()[0]);
    for (int i = 0; i < lg.shape()[0]; ++i) out[i] = argmax_row(lg, i);
    return out;
}

}  // namespace puridiff
