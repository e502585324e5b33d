#include "catuda/trainer.hpp"

#include "catuda/errors.hpp"

#include <cmath>
#include <sstream>

namespace catuda {

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

void scatter_add_rows(Matrix& dst, const Matrix& src, const std::vector<std::size_t>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        dst.row(static_cast<Eigen::Index>(rows[i])) += src.row(static_cast<Eigen::Index>(i));
    }
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, c);
    return out;
}

Matrix as_column(const std::vector<double>& v, double sign) {
    Matrix out(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = sign * v[i];
    return out;
}

[[noreturn]] void abort_training(const std::string& what, std::size_t iteration,
                                 const LossBundle& b) {
    std::ostringstream os;
    os << "training aborted at iteration " << iteration << ": " << what << " (l_y=" << b.l_y
       << " l_c=" << b.l_c << " l_a=" << b.l_a << " l_d=" << b.l_d << " alpha=" << b.alpha
       << " lambda=" << b.lambda << ")";
    throw TrainingAbort(os.str(), iteration);
}

}  // namespace

double alpha_logistic(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("alpha_logistic: t must be in [0, 1]");
    return 2.0 / (1.0 + std::exp(-10.0 * t)) - 1.0;
}

double alpha_exp_ramp(std::size_t ite, std::size_t start, std::size_t length) {
    if (length == 0) throw ParameterError("alpha_exp_ramp: length must be > 0");
    if (ite < start) return 0.0;
    const double frac =
        std::min(static_cast<double>(ite - start) / static_cast<double>(length), 1.0);
    return std::exp(-10.0 * (1.0 - frac));
}

double lr_schedule(double progress, double base) {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw ParameterError("lr_schedule: progress must be in [0, 1]");
    }
    return base / std::pow(1.0 + 10.0 * progress, 0.75);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ParameterError(field + ": " + why);
    };
    if (total_iters < 1) fail("total_iters", "must be >= 1");
    if (pretrain_iters > total_iters) fail("pretrain_iters", "must not exceed total_iters");
    if (batch_source < 1) fail("batch_source", "must be >= 1");
    if (batch_target < 1) fail("batch_target", "must be >= 1");
    if (!(m > 0.0)) fail("m", "must be > 0");
    if (!(p >= 0.0 && p <= 1.0)) fail("p", "must be in [0, 1]");
    if (!(alpha_max >= 0.0)) fail("alpha_max", "must be >= 0");
    if (!(lambda_max >= 0.0)) fail("lambda_max", "must be >= 0");
    if (!(lr_base > 0.0)) fail("lr_base", "must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must be in [0, 1)");
    if (!(decay >= 0.0 && decay < 1.0)) fail("decay", "must be in [0, 1)");
    if (critic_hidden < 1) fail("critic_hidden", "must be >= 1");
    if (!(student.dropout >= 0.0 && student.dropout < 1.0)) fail("dropout", "must be in [0, 1)");
    for (auto h : student.hidden) {
        if (h == 0) fail("hidden", "layer widths must be positive");
    }
}

Weights schedule_at(const TrainConfig& cfg, std::size_t iteration) {
    Weights w;
    w.lr = lr_schedule(std::min(1.0, static_cast<double>(iteration) / static_cast<double>(cfg.total_iters)),
                       cfg.lr_base);
    if (iteration < cfg.pretrain_iters) return w;

    const std::size_t span = cfg.total_iters - cfg.pretrain_iters;
    double s = 1.0;
    switch (cfg.alpha_schedule) {
        case RampSchedule::logistic: {
            const double t = span == 0 ? 1.0
                                       : std::min(1.0, static_cast<double>(iteration - cfg.pretrain_iters) /
                                                           static_cast<double>(span));
            s = alpha_logistic(t);
            break;
        }
        case RampSchedule::exp_ramp:
            s = alpha_exp_ramp(iteration, cfg.pretrain_iters,
                               cfg.ramp_length > 0 ? cfg.ramp_length : std::max<std::size_t>(span, 1));
            break;
        case RampSchedule::constant:
            s = 1.0;
            break;
    }
    w.alpha = cfg.alpha_max * s;
    w.lambda = cfg.lambda_schedule == LambdaSchedule::same_as_alpha ? cfg.lambda_max * s : cfg.lambda_max;
    return w;
}

NetworkSpec student_spec(const TrainConfig& cfg, const DomainDataset& ds) {
    NetworkSpec spec;
    spec.layer_sizes.push_back(ds.dim());
    for (auto h : cfg.student.hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(static_cast<std::size_t>(ds.num_classes()));
    spec.activation = cfg.student.activation;
    spec.dropout_rate = cfg.student.dropout;
    spec.feature_tap = cfg.student.feature_tap.value_or(
        ds.num_classes() == 2 ? FeatureTap::logits : FeatureTap::penultimate);
    spec.head = Head::softmax;
    return spec;
}

NetworkSpec critic_spec(const TrainConfig& cfg, std::size_t feature_dim) {
    NetworkSpec spec;
    spec.layer_sizes = {feature_dim, cfg.critic_hidden, cfg.critic_hidden, 1};
    spec.activation = Activation::relu;
    spec.head = Head::sigmoid;
    return spec;
}

std::uint64_t noise_seed(const TrainConfig& cfg, std::size_t iteration, NoiseStream stream) {
    return derive_seed(cfg.seed, {static_cast<std::uint64_t>(stream), iteration});
}

TrainState make_train_state(const TrainConfig& cfg, const DomainDataset& ds) {
    cfg.validate();
    Network student(student_spec(cfg, ds), noise_seed(cfg, 0, NoiseStream::student_init));
    Network critic(critic_spec(cfg, student.spec().feature_dim()),
                   noise_seed(cfg, 0, NoiseStream::critic_init));
    auto student_opt = OptimizerState::for_network(student, cfg.momentum, cfg.lr_base);
    auto critic_opt = OptimizerState::for_network(critic, cfg.momentum, cfg.lr_base);
    std::optional<TemporalEnsemble> ensemble;
    if (cfg.teacher_mode == TeacherKind::temporal) {
        ensemble.emplace(ds.target_size(), static_cast<std::size_t>(ds.num_classes()), cfg.decay);
    }
    return TrainState{std::move(student), std::move(critic), std::move(student_opt),
                      std::move(critic_opt), std::move(ensemble), 0};
}

StepResult compute_step(const Network& student, const Network& critic, const BatchPair& batch,
                        const TrainConfig& cfg, const StepInputs& in) {
    const int k = static_cast<int>(student.spec().output_dim());
    const auto fs = forward(student, batch.source_x, Mode::train, in.source_noise);
    const auto ft = forward(student, batch.target_x, Mode::train, in.target_noise);

    StepResult out;
    out.target_probabilities = ft.probabilities;
    LossBundle& b = out.bundle;
    b.alpha = in.alpha;
    b.lambda = in.lambda;
    b.target_batch_size = static_cast<std::size_t>(batch.target_x.rows());

    const PseudoLabels labels = in.target_labels ? *in.target_labels : pseudo_labels(ft.probabilities);
    if (labels.labels.size() != b.target_batch_size) {
        throw ShapeError("compute_step: pseudo label count differs from target batch size");
    }

    // Unseen targets (temporal teacher, never updated) carry no label.
    std::vector<std::size_t> seen_rows;
    for (std::size_t i = 0; i < labels.seen.size(); ++i) {
        if (labels.seen[i]) seen_rows.push_back(i);
    }
    PseudoLabeledBatch src{fs.features, batch.source_y,
                           std::vector<double>(batch.source_y.size(), 1.0), k};
    PseudoLabeledBatch tgt{gather_rows(ft.features, seen_rows), {}, {}, k};
    for (auto r : seen_rows) {
        tgt.labels.push_back(labels.labels[r]);
        tgt.confidences.push_back(labels.confidences[r]);
    }

    const auto ce = cross_entropy(fs.probabilities, batch.source_y);
    b.l_y = ce.loss;
    b.d_logits_source = ce.d_logits;

    const auto feat_cols = fs.features.cols();
    b.d_features_source = Matrix::Zero(fs.features.rows(), feat_cols);
    b.d_features_target = Matrix::Zero(ft.features.rows(), feat_cols);

    if (cfg.use_clustering) {
        const auto cs = clustering_loss(src, cfg.m, cfg.metric);
        b.l_c = cs.loss;
        b.d_features_source += cs.d_features;
        if (!seen_rows.empty()) {
            const auto ct = clustering_loss(tgt, cfg.m, cfg.metric);
            b.l_c += ct.loss;
            scatter_add_rows(b.d_features_target, ct.d_features, seen_rows);
        }
    }
    if (cfg.use_alignment) {
        const auto al = alignment_loss(src, tgt);
        b.l_a = al.loss;
        b.d_features_source += al.d_features_source;
        scatter_add_rows(b.d_features_target, al.d_features_target, seen_rows);
    }

    // Critic sees the student's features; its own loss is -L_d.
    const auto cs_trace = forward(critic, fs.features, Mode::train, 0);
    const auto ct_trace = forward(critic, ft.features, Mode::train, 0);
    const auto adv = domain_adversarial_loss(column(cs_trace.probabilities, 0),
                                             column(ct_trace.probabilities, 0), labels.confidences,
                                             cfg.p);
    b.l_d = adv.loss;
    b.selection_count = adv.selection_count;

    Upstream critic_src;
    critic_src.d_probabilities = as_column(adv.d_source, -1.0);
    Upstream critic_tgt;
    critic_tgt.d_probabilities = as_column(adv.d_target, -1.0);
    auto bp_cs = backpropagate(critic, cs_trace, critic_src);
    auto bp_ct = backpropagate(critic, ct_trace, critic_tgt);
    b.critic_grads = std::move(bp_cs.params);
    b.critic_grads += bp_ct.params;

    Upstream student_src;
    student_src.d_logits = b.d_logits_source;
    Upstream student_tgt;
    Matrix d_src = Matrix::Zero(fs.features.rows(), feat_cols);
    Matrix d_tgt = Matrix::Zero(ft.features.rows(), feat_cols);
    bool target_active = false;
    if (in.alpha > 0.0) {
        d_src += in.alpha * b.d_features_source;
        d_tgt += in.alpha * b.d_features_target;
        target_active = true;
    }
    if (in.lambda > 0.0) {
        d_src += reverse_gradient(bp_cs.d_input, in.lambda);
        d_tgt += reverse_gradient(bp_ct.d_input, in.lambda);
        target_active = true;
    }
    if (target_active) {
        student_src.d_features = std::move(d_src);
        student_tgt.d_features = std::move(d_tgt);
    }

    out.student_grads = backpropagate(student, fs, student_src).params;
    if (target_active) out.student_grads += backpropagate(student, ft, student_tgt).params;
    out.objective = b.l_y + in.alpha * (b.l_c + b.l_a) + in.lambda * b.l_d;
    return out;
}

LossBundle train_step(TrainState& state, const BatchPair& batch, const TrainConfig& cfg) {
    const std::size_t t = state.iteration;
    const Weights w = schedule_at(cfg, t);

    StepInputs in;
    in.alpha = w.alpha;
    in.lambda = w.lambda;
    in.source_noise = noise_seed(cfg, t, NoiseStream::source_pass);
    in.target_noise = noise_seed(cfg, t, NoiseStream::target_pass);
    switch (cfg.teacher_mode) {
        case TeacherKind::temporal:
            in.target_labels = pseudo_labels(*state.ensemble, batch.target_indices);
            break;
        case TeacherKind::pi:
            in.target_labels = pseudo_labels(
                pi_predict(state.student, batch.target_x, noise_seed(cfg, t, NoiseStream::teacher_pass)));
            break;
        case TeacherKind::self:
            break;
    }

    StepResult step = compute_step(state.student, state.critic, batch, cfg, in);
    LossBundle& b = step.bundle;
    if (!std::isfinite(b.l_y) || !std::isfinite(b.l_c) || !std::isfinite(b.l_a) ||
        !std::isfinite(b.l_d)) {
        abort_training("non-finite loss", t, b);
    }
    if (!step.student_grads.all_finite() || !b.critic_grads.all_finite()) {
        abort_training("non-finite gradient", t, b);
    }

    if (state.ensemble) state.ensemble->update(batch.target_indices, step.target_probabilities);
    sgd_step(state.student, state.student_opt, step.student_grads, w.lr);
    sgd_step(state.critic, state.critic_opt, b.critic_grads, w.lr);
    if (!state.student.all_finite() || !state.critic.all_finite()) {
        abort_training("non-finite parameter after update", t, b);
    }
    ++state.iteration;
    return std::move(step.bundle);
}

PseudoLabels teacher_view(const TrainState& state, const TrainConfig& cfg, const DomainDataset& ds) {
    switch (cfg.teacher_mode) {
        case TeacherKind::temporal:
            return pseudo_labels(state.ensemble->corrected());
        case TeacherKind::pi:
            return pseudo_labels(pi_predict(state.student, ds.target_x(),
                                            noise_seed(cfg, state.iteration, NoiseStream::eval)));
        case TeacherKind::self:
            break;
    }
    return pseudo_labels(forward(state.student, ds.target_x(), Mode::eval, 0).probabilities);
}

RunMetrics evaluate(const TrainState& state, const TrainConfig& cfg, const DomainDataset& ds) {
    RunMetrics m;
    m.iteration = state.iteration;
    const auto fs = forward(state.student, ds.source_x(), Mode::eval, 0);
    const auto ft = forward(state.student, ds.target_x(), Mode::eval, 0);
    const auto& target_y = hidden_target_labels(ds);
    m.source_accuracy = accuracy(fs.probabilities, ds.source_y());
    m.target_accuracy = accuracy(ft.probabilities, target_y);

    const auto k = static_cast<std::size_t>(ds.num_classes());
    const auto seed = noise_seed(cfg, state.iteration, NoiseStream::eval);
    Matrix combined(fs.features.rows() + ft.features.rows(), fs.features.cols());
    combined << fs.features, ft.features;
    std::vector<int> combined_y(ds.source_y());
    combined_y.insert(combined_y.end(), target_y.begin(), target_y.end());
    m.clustering_accuracy =
        cluster_accuracy(kmeans_restarts(combined, k, seed).assignments, combined_y);
    m.clustering_accuracy_source =
        cluster_accuracy(kmeans_restarts(fs.features, k, seed).assignments, ds.source_y());
    m.clustering_accuracy_target =
        cluster_accuracy(kmeans_restarts(ft.features, k, seed).assignments, target_y);

    const auto teacher = teacher_view(state, cfg, ds);
    m.selection_rate = selection_rate(teacher.confidences, cfg.p);

    const auto cs = forward(state.critic, fs.features, Mode::eval, 0);
    const auto ct = forward(state.critic, ft.features, Mode::eval, 0);
    const auto src_out = column(cs.probabilities, 0);
    const auto tgt_out = column(ct.probabilities, 0);
    const std::vector<double> everyone(tgt_out.size(), 1.0);
    m.jsd_proxy = jsd_proxy(domain_adversarial_loss(src_out, tgt_out, everyone, 0.0).loss);
    m.jsd_proxy_selected =
        jsd_proxy(domain_adversarial_loss(src_out, tgt_out, teacher.confidences, cfg.p).loss);
    return m;
}

TrainResult train(const TrainConfig& cfg, const DomainDataset& ds, std::size_t eval_every) {
    if (eval_every < 1) throw ParameterError("eval_every must be >= 1");
    TrainResult result{make_train_state(cfg, ds), {}};
    TrainState& state = result.state;
    BatchStream stream(ds, cfg.batch_source, cfg.batch_target, noise_seed(cfg, 0, NoiseStream::batches));

    {
        TrainState probe = state;
        BatchStream peek = stream;
        const auto b = train_step(probe, peek.next(), cfg);
        RunMetrics m = evaluate(state, cfg, ds);
        m.l_y = b.l_y;
        m.l_c = b.l_c;
        m.l_a = b.l_a;
        m.l_d = b.l_d;
        result.metrics.push_back(m);
    }

    double sum_y = 0.0, sum_c = 0.0, sum_a = 0.0, sum_d = 0.0;
    std::size_t window = 0;
    while (state.iteration < cfg.total_iters) {
        const auto b = train_step(state, stream.next(), cfg);
        sum_y += b.l_y;
        sum_c += b.l_c;
        sum_a += b.l_a;
        sum_d += b.l_d;
        ++window;
        if (state.iteration % eval_every == 0) {
            RunMetrics m = evaluate(state, cfg, ds);
            const double n = static_cast<double>(window);
            m.l_y = sum_y / n;
            m.l_c = sum_c / n;
            m.l_a = sum_a / n;
            m.l_d = sum_d / n;
            result.metrics.push_back(m);
            sum_y = sum_c = sum_a = sum_d = 0.0;
            window = 0;
        }
    }
    return result;
}

}  // namespace catuda
