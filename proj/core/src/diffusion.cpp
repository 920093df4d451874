#include "puridiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

int NoiseSchedule::check(int t) const {
    if (t < 1 || t > T)
        throw argument_error("schedule step " + std::to_string(t) + " out of range [1," +
                             std::to_string(T) + "]");
    return t;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw argument_error("make_schedule: T must be >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw argument_error("make_schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.posterior_var.resize(T);
    double abar_prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        double abar = abar_prev * s.alpha[t - 1];
        s.alpha_bar[t - 1] = abar;
        s.posterior_var[t - 1] = b * (1.0 - abar_prev) / (1.0 - abar);
        abar_prev = abar;
    }
    return s;
}

const char* eps_arch_name(EpsArch a) { return a == EpsArch::mlp2d ? "mlp2d" : "unet"; }

EpsArch eps_arch_from_name(const std::string& name) {
    if (name == "mlp2d") return EpsArch::mlp2d;
    if (name == "unet") return EpsArch::unet;
    throw argument_error("unknown eps architecture '" + name + "'");
}

Tensor DiffusionModel::eps_t(const Tensor& x_t, const std::vector<int>& t_batch) const {
    int b = x_t.shape()[0];
    if (static_cast<int>(t_batch.size()) != b)
        throw argument_error("eps_t: step count does not match batch size");
    Tensor temb = time_embedding_batch(t_batch, kTimeEmbedDim);
    if (arch == EpsArch::mlp2d) {
        Tensor h = concat_cols(x_t, temb);
        h = silu(fc1(h));
        h = silu(fc2(h));
        h = silu(fc3(h));
        return fc_out(h);
    }
    Tensor e0 = silu(add(conv_in(x_t), bcast_chan_bc(tproj0(temb), {b, 8, x_t.shape()[2], x_t.shape()[3]})));
    Tensor p1 = avgpool2(e0);
    Tensor e1 = silu(add(conv_d1(p1), bcast_chan_bc(tproj1(temb), {b, 16, p1.shape()[2], p1.shape()[3]})));
    Tensor p2 = avgpool2(e1);
    Tensor e2 = silu(add(conv_d2(p2), bcast_chan_bc(tproj2(temb), {b, 16, p2.shape()[2], p2.shape()[3]})));
    Tensor d1 = silu(conv_u1(concat_chan(upsample2(e2), e1)));
    Tensor d0 = silu(conv_u0(concat_chan(upsample2(d1), e0)));
    return conv_out(d0);
}

Tensor DiffusionModel::eps_t(const Tensor& x_t, int t) const {
    return eps_t(x_t, std::vector<int>(x_t.shape()[0], t));
}

DiffusionModel make_diffusion_model(EpsArch arch, Shape sample_shape,
                                    const NoiseSchedule& schedule, uint64_t seed) {
    DiffusionModel m;
    m.schedule = schedule;
    m.arch = arch;
    m.sample_shape = sample_shape;
    m.seed = seed;
    Rng rng(derive_seed(seed, "diffusion_init"));
    if (arch == EpsArch::mlp2d) {
        if (sample_shape.size() != 1)
            throw argument_error("make_diffusion_model: mlp2d requires flat samples");
        int d = sample_shape[0];
        m.fc1 = make_dense(m.params, "fc1", d + kTimeEmbedDim, 128, rng);
        m.fc2 = make_dense(m.params, "fc2", 128, 128, rng);
        m.fc3 = make_dense(m.params, "fc3", 128, 128, rng);
        m.fc_out = make_dense(m.params, "fc_out", 128, d, rng, 0.1);
    } else {
        if (sample_shape.size() != 3 || sample_shape[0] != 1)
            throw argument_error("make_diffusion_model: unet requires (1,H,W) samples");
        if (sample_shape[1] % 4 != 0 || sample_shape[2] % 4 != 0)
            throw argument_error("make_diffusion_model: unet requires sides divisible by 4");
        m.conv_in = make_conv3x3(m.params, "conv_in", 1, 8, rng);
        m.conv_d1 = make_conv3x3(m.params, "conv_d1", 8, 16, rng);
        m.conv_d2 = make_conv3x3(m.params, "conv_d2", 16, 16, rng);
        m.conv_u1 = make_conv3x3(m.params, "conv_u1", 32, 8, rng);
        m.conv_u0 = make_conv3x3(m.params, "conv_u0", 16, 8, rng);
        m.conv_out = make_conv3x3(m.params, "conv_out", 8, 1, rng, 0.1);
        m.tproj0 = make_dense(m.params, "tproj0", kTimeEmbedDim, 8, rng);
        m.tproj1 = make_dense(m.params, "tproj1", kTimeEmbedDim, 16, rng);
        m.tproj2 = make_dense(m.params, "tproj2", kTimeEmbedDim, 16, rng);
    }
    m.params.set_trainable(false);
    return m;
}

Tensor forward_sample(const NoiseSchedule& schedule, const Tensor& x0, int t,
                      const Tensor& noise) {
    if (!same_shape(x0.shape(), noise.shape()))
        throw argument_error("forward_sample: noise shape must match x0");
    double abar = schedule.alpha_bar_at(t);  // validates t
    return add(mul_scalar(x0, std::sqrt(abar)), mul_scalar(noise, std::sqrt(1.0 - abar)));
}

Tensor forward_chain(const NoiseSchedule& schedule, const Tensor& x0, int t, uint64_t seed) {
    schedule.alpha_bar_at(t);
    Rng rng(seed);
    std::vector<double> x = x0.data();
    std::vector<double> z(x.size());
    for (int s = 1; s <= t; ++s) {
        double sa = std::sqrt(schedule.alpha_at(s));
        double sb = std::sqrt(schedule.beta_at(s));
        rng.fill_normal(z);
        for (size_t i = 0; i < x.size(); ++i) x[i] = sa * x[i] + sb * z[i];
    }
    return Tensor::constant(x0.shape(), std::move(x));
}

DiffusionModel train_diffusion(const LabeledDataset& data, const NoiseSchedule& schedule,
                               int epochs, uint64_t seed, const DiffusionTrainOptions& opts,
                               std::vector<double>* epoch_losses) {
    data.validate();
    if (epochs < 1) throw argument_error("train_diffusion: epochs must be >= 1");
    EpsArch arch = data.is_image() ? EpsArch::unet : EpsArch::mlp2d;
    DiffusionModel model = make_diffusion_model(arch, data.sample_shape(), schedule, seed);
    model.params.set_trainable(true);

    Rng rng(derive_seed(seed, "diffusion_train"));
    AdamOptimizer opt(opts.learning_rate);
    int n = data.size();
    int dim = data.sample_dim();

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> order = random_permutation(n, rng);
        double loss_sum = 0.0;
        for (int start = 0; start < n; start += opts.batch_size) {
            int stop = std::min(n, start + opts.batch_size);
            int b = stop - start;
            std::vector<int> idx(order.begin() + start, order.begin() + stop);
            Tensor x0 = data.batch(idx);

            std::vector<int> ts(b);
            for (int k = 0; k < b; ++k) ts[k] = static_cast<int>(rng.uniform_int(1, schedule.T));
            std::vector<double> noise(static_cast<size_t>(b) * dim);
            rng.fill_normal(noise);
            Tensor eps = Tensor::constant(x0.shape(), noise);

            // per-sample closed-form x_t
            std::vector<double> xt(noise.size());
            const auto& x0v = x0.data();
            for (int k = 0; k < b; ++k) {
                double abar = schedule.alpha_bar_at(ts[k]);
                double sa = std::sqrt(abar), sn = std::sqrt(1.0 - abar);
                for (int j = 0; j < dim; ++j) {
                    size_t at = static_cast<size_t>(k) * dim + j;
                    xt[at] = sa * x0v[at] + sn * noise[at];
                }
            }
            Tensor x_t = Tensor::constant(x0.shape(), std::move(xt));
            Tensor loss = mean(square(sub(eps, model.eps_t(x_t, ts))));
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw training_error("train_diffusion: non-finite loss at epoch " +
                                     std::to_string(epoch + 1));
            loss_sum += lv * b;
            GradMap grads = backward(loss);
            opt.step(model.params, grads);
        }
        if (epoch_losses) epoch_losses->push_back(loss_sum / n);
        if (!model.params.all_finite())
            throw training_error("train_diffusion: non-finite parameters at epoch " +
                                 std::to_string(epoch + 1));
    }
    model.params.set_trainable(false);
    return model;
}

Tensor reverse_step(const DiffusionModel& model, const Tensor& x_t, int t, uint64_t seed) {
    NoGradGuard ng;
    const NoiseSchedule& s = model.schedule;
    double beta = s.beta_at(t);  // validates t
    double coef = beta / std::sqrt(1.0 - s.alpha_bar_at(t));
    double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha_at(t));
    Tensor eps = model.eps_t(x_t, t);
    Tensor mu = mul_scalar(sub(x_t, mul_scalar(eps, coef)), inv_sqrt_alpha);
    if (t == 1) return mu;
    double sigma = std::sqrt(s.posterior_var_at(t));
    std::vector<double> z(static_cast<size_t>(mu.size()));
    Rng(seed).fill_normal(z);
    return add(mu, mul_scalar(Tensor::constant(mu.shape(), std::move(z)), sigma));
}

Tensor sample_from_noise(const DiffusionModel& model, int n, uint64_t seed) {
    NoGradGuard ng;
    Shape shape = model.sample_shape;
    shape.insert(shape.begin(), n);
    std::vector<double> z(static_cast<size_t>(numel(shape)));
    Rng rng(seed);
    rng.fill_normal(z);
    Tensor x = Tensor::constant(shape, std::move(z));
    for (int t = model.schedule.T; t >= 1; --t)
        x = reverse_step(model, x, t, derive_seed(seed, "reverse/" + std::to_string(t)));
    return x;
}

}  // namespace puridiff
