#include <cmath>
#include <numeric>

#include "advecg/errors.hpp"
#include "advecg/models.hpp"
#include "advecg/ops.hpp"
#include "advecg/rng.hpp"

namespace advecg {

AutoencoderTrainResult pretrain_autoencoder(std::span<const EcgRecord> records, std::span<const std::size_t> indices,
                                            const AutoencoderConfig& config, const AutoencoderTrainConfig& train) {
    if (indices.empty()) throw InvalidInput("pretrain_autoencoder needs a nonempty cohort");
    if (train.batch_size == 0) throw InvalidInput("batch size must be positive");
    AutoencoderTrainResult result{Autoencoder(config, mix_seed(train.seed, 0xae)), {}, true};
    Autoencoder& ae = result.model;
    AdamState adam = make_adam_state(ae.params());
    AdamConfig opt;
    opt.lr = train.lr;

    std::vector<std::size_t> order(indices.begin(), indices.end());
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        SplitMix64 rng(mix_seed(train.seed, {0xe90c4ull, epoch}));
        shuffle(order, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t len = std::min(train.batch_size, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            Tape tape;
            const auto bound = ae.params().bind(tape, true);
            const Var x = tape.constant(to_batch(records, batch));
            const Var diff = sub(ae.decode(ae.encode(x, bound), bound), x);
            const Var loss = mean(mul(diff, diff));
            total += loss.value().item() * static_cast<double>(len);
            auto grads = tape.backward(loss);
            adam_step(ae.params(), adam, collect_gradients(ae.params(), bound, grads), opt);
        }
        result.epoch_loss.push_back(total / static_cast<double>(order.size()));
    }
    result.smoothed_loss_non_increasing = smoothed_non_increasing(result.epoch_loss);
    return result;
}

ReconstructionError reconstruction_error(const Autoencoder& ae, std::span<const EcgRecord> records,
                                         std::span<const std::size_t> indices) {
    if (indices.empty()) throw InvalidInput("reconstruction_error needs at least one record");
    ReconstructionError e;
    const std::size_t chunk = 32;
    double count = 0.0;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::size_t len = std::min(chunk, indices.size() - start);
        const Tensor x = to_batch(records, indices.subspan(start, len));
        const Tensor xh = ae.decode(ae.encode(x));
        for (std::size_t i = 0; i < x.size(); ++i) {
            e.model_mse += (xh[i] - x[i]) * (xh[i] - x[i]);
            e.zero_mse += x[i] * x[i];
        }
        count += static_cast<double>(x.size());
    }
    e.model_mse /= count;
    e.zero_mse /= count;
    return e;
}

double decoder_lipschitz_estimate(const Autoencoder& ae, const Tensor& latents, std::size_t trials, double scale,
                                  std::uint64_t seed) {
    if (latents.rank() != 2 || latents.shape()[0] == 0) throw ShapeError("latents must be a nonempty [N, D_z] batch");
    const std::size_t dz = latents.shape()[1];
    SplitMix64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t row = rng.below(latents.shape()[0]);
        Tensor z(Shape{2, dz});
        double dmax = 0.0;
        for (std::size_t j = 0; j < dz; ++j) {
            const double d = rng.uniform(-scale, scale);
            z[j] = latents[row * dz + j];
            z[dz + j] = z[j] + d;
            dmax = std::max(dmax, std::abs(d));
        }
        const Tensor out = ae.decode(z);
        const std::size_t half = out.size() / 2;
        double diff = 0.0;
        for (std::size_t i = 0; i < half; ++i) diff = std::max(diff, std::abs(out[half + i] - out[i]));
        if (dmax > 0.0) worst = std::max(worst, diff / dmax);
    }
    return worst;
}

}  // namespace advecg
