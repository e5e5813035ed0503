#include "camal/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "camal/attention.hpp"
#include "camal/common.hpp"
#include "camal/regularizers.hpp"
#include "camal/rng.hpp"

namespace camal::train {

std::string to_string(Method m) {
    switch (m) {
        case Method::Vanilla: return "vanilla";
        case Method::Camal: return "camal";
        default: return "prior";
    }
}

Method method_from_string(const std::string& s) {
    if (s == "vanilla") return Method::Vanilla;
    if (s == "camal") return Method::Camal;
    if (s == "prior") return Method::Prior;
    throw ConfigError("unknown method '" + s + "' (expected vanilla, camal, or prior)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0f) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be nonnegative");
    if (lambda < 0.0f) throw ConfigError("lambda must be nonnegative");
    if (method == Method::Prior && pseudo_mask_dir.empty())
        throw ConfigError("method=prior requires a pseudo-mask directory (prior.mask_dir)");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct StepResult {
    reg::LossBreakdown breakdown;
    double extraction_seconds = 0.0;
    int64_t degenerate = 0;
};

// One optimization step. `masks` is undefined for vanilla.
StepResult run_step(models::Model& model, nn::AdamW& opt, const std::vector<Tensor>& params,
                    const TrainConfig& cfg, const Tensor& images,
                    const std::vector<int64_t>& labels, const Tensor& masks, bool value_probe,
                    const Tensor& value_targets) {
    StepResult res;
    bool attention_on = cfg.method != Method::Vanilla;

    Tensor task, total;
    reg::AlphaBetaBatch ab;
    Tensor camal;
    if (!attention_on) {
        if (value_probe) {
            auto fc = model.forward_with_capture(images, "");
            task = mse_mean(fc.value, value_targets);
        } else {
            task = cross_entropy_mean(model.forward(images), labels);
        }
        total = task;
    } else {
        auto fc = model.forward_with_capture(images, cfg.capture_layer);
        task = value_probe ? mse_mean(fc.value, value_targets)
                           : cross_entropy_mean(fc.logits, labels);
        Clock::time_point ex0 = Clock::now();
        auto sel = value_probe ? models::ScalarTargetSelector::value_head()
                               : models::ScalarTargetSelector::ground_truth(labels);
        Tensor scalars = models::select_scalar(value_probe ? fc.value : fc.logits, sel);
        Tensor grads = models::gradients_for_summed_target(fc.features, scalars,
                                                           /*retain_higher_order=*/true);
        if (cfg.detach_cam_weights) grads = detach(grads);
        Tensor cam = attention::gradcam_batch(fc.features, grads);
        res.degenerate = attention::count_degenerate(cam);
        auto norm = attention::normalize_minmax(cam);
        auto up = attention::upsample_to(norm, masks.dim(1), masks.dim(2));
        ab = reg::alpha_beta(up.values, masks);
        camal = reg::camal_term(ab);
        res.extraction_seconds = seconds_since(ex0);
        total = reg::total_loss(task, camal, cfg.lambda);
    }

    if (!all_finite(total)) {
        std::ostringstream os;
        os << "non-finite loss: task=" << task.item();
        if (camal.defined()) os << " camal=" << camal.item();
        throw NumericError(os.str());
    }

    auto grads = grad(total, params, /*create_graph=*/false, /*allow_unused=*/true);
    opt.step(grads);

    res.breakdown.task_loss = task.item();
    res.breakdown.lambda = attention_on ? cfg.lambda : 0.0;
    res.breakdown.camal_term = camal.defined() ? camal.item() : 0.0;
    res.breakdown.total = total.item();
    if (ab.alpha.defined()) {
        res.breakdown.alpha_mean = mean_all(ab.alpha).item();
        res.breakdown.beta_mean = mean_all(ab.beta).item();
    }
    return res;
}

RunArtifacts train_loop(const TrainConfig& cfg, const data::Dataset& ds,
                        const std::vector<int>& train_idx, bool value_probe,
                        const std::map<std::string, std::vector<uint8_t>>* pseudo_masks) {
    cfg.validate();
    RunArtifacts run;
    Clock::time_point t0 = Clock::now();
    uint64_t backward0 = autograd::backward_pass_count();

    models::ModelConfig mc{cfg.model_name, ds.n_classes, ds.height, cfg.seed};
    run.model = models::make_model(mc);
    auto params = run.model->parameters();
    nn::AdamW opt(params, cfg.learning_rate, cfg.weight_decay);

    Rng shuffle_rng(cfg.seed ^ 0x7a41fULL);
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = train_idx;
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int> batch(
                order.begin() + static_cast<long>(start),
                order.begin() + static_cast<long>(std::min(
                                    order.size(), start + static_cast<size_t>(cfg.batch_size))));
            Tensor images = data::image_batch(ds, batch, /*eval_view=*/false);
            auto labels = data::label_batch(ds, batch);
            Tensor masks, value_targets;
            if (cfg.method != Method::Vanilla) {
                masks = pseudo_masks ? data::mask_batch_from(ds, batch, *pseudo_masks)
                                     : data::mask_batch(ds, batch);
            }
            if (value_probe) {
                // regression target: mask area fraction
                std::vector<float> targets;
                for (int i : batch) {
                    const auto& s = ds.samples[static_cast<size_t>(i)];
                    double on = 0;
                    for (uint8_t v : s.mask) on += v;
                    targets.push_back(static_cast<float>(on / static_cast<double>(s.mask.size())));
                }
                value_targets = from_data({static_cast<int64_t>(targets.size())}, std::move(targets));
            }
            StepResult sr;
            try {
                sr = run_step(*run.model, opt, params, cfg, images, labels, masks, value_probe,
                              value_targets);
            } catch (const NumericError& e) {
                std::ostringstream os;
                os << e.what() << " at step " << step << " (epoch " << epoch << ")";
                throw NumericError(os.str());
            }
            ++step;
            run.log.push_back({step, sr.breakdown.task_loss, sr.breakdown.camal_term,
                               sr.breakdown.alpha_mean, sr.breakdown.beta_mean,
                               sr.breakdown.total});
            run.extraction_seconds += sr.extraction_seconds;
            run.degenerate_cam_samples += sr.degenerate;
        }
    }
    run.steps = step;
    run.total_seconds = seconds_since(t0);
    run.backward_passes = static_cast<int64_t>(autograd::backward_pass_count() - backward0);
    return run;
}

}  // namespace

RunArtifacts train_classifier(const TrainConfig& cfg, const data::Dataset& ds,
                              const data::FoldPlan& plan, int fold) {
    if (fold < 0 || fold >= plan.k) throw ConfigError("fold index out of range");
    std::map<std::string, std::vector<uint8_t>> pseudo;
    const std::map<std::string, std::vector<uint8_t>>* pseudo_ptr = nullptr;
    if (cfg.method == Method::Prior) {
        cfg.validate();
        pseudo = data::load_pseudo_masks(cfg.pseudo_mask_dir, ds);
        pseudo_ptr = &pseudo;
    }
    auto train_idx = plan.train_indices(ds, fold);
    RunArtifacts run = train_loop(cfg, ds, train_idx, /*value_probe=*/false, pseudo_ptr);
    run.fold = fold;
    return run;
}

RunArtifacts train_scalar_target_probe(const TrainConfig& cfg, const data::Dataset& ds) {
    std::vector<int> all(ds.samples.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return train_loop(cfg, ds, all, /*value_probe=*/true, nullptr);
}

}  // namespace camal::train
