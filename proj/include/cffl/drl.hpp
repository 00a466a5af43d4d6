#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "cffl/coalition.hpp"
#include "cffl/nn.hpp"
#include "cffl/rng.hpp"

namespace cffl::drl {

using coalition::CoalitionPartition;
using nn::Gradient;
using nn::LayeredModel;

// ---------------------------------------------------------------------------
// State, observation, replay
// ---------------------------------------------------------------------------

// S = {C, D}: one-hot coalition choices plus coalition sizes normalized by K.
inline std::vector<double> state_features(const CoalitionPartition& p) {
    const int k = p.num_users();
    const int j = p.max_coalitions;
    std::vector<double> f(static_cast<std::size_t>(k) * (j + 1) + j, 0.0);
    for (int u = 0; u < k; ++u) f[static_cast<std::size_t>(u) * (j + 1) + p.assignment[u]] = 1.0;
    const auto sizes = p.sizes();
    for (int c = 0; c < j; ++c)
        f[static_cast<std::size_t>(k) * (j + 1) + c] = static_cast<double>(sizes[c]) / k;
    return f;
}

inline int state_dim(int num_users, int max_coalitions) {
    return num_users * (max_coalitions + 1) + max_coalitions;
}

// What a Qmix agent is allowed to see: its own coalition id (one-hot) and the
// size of that coalition, normalized by K. Nothing about other users' choices.
// `full_sizes` swaps the own-size scalar for the whole size vector D.
struct AgentObservation {
    std::vector<double> features;
};

inline AgentObservation agent_observation(const CoalitionPartition& p, int user,
                                          bool full_sizes = false) {
    const int j = p.max_coalitions;
    AgentObservation obs;
    obs.features.assign(static_cast<std::size_t>(j) + 1 + (full_sizes ? j : 1), 0.0);
    const int own = p.assignment.at(static_cast<std::size_t>(user));
    obs.features[static_cast<std::size_t>(own)] = 1.0;
    const auto sizes = p.sizes();
    if (full_sizes) {
        for (int c = 0; c < j; ++c)
            obs.features[static_cast<std::size_t>(j) + 1 + c] =
                static_cast<double>(sizes[c]) / p.num_users();
    } else {
        const int own_size = own == 0 ? 1 : sizes[own - 1];
        obs.features.back() = static_cast<double>(own_size) / p.num_users();
    }
    return obs;
}

inline int obs_dim(int max_coalitions, bool full_sizes = false) {
    return max_coalitions + 1 + (full_sizes ? max_coalitions : 1);
}

struct Transition {
    std::vector<double> state;
    std::vector<int> action;  // coalition id per user
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 10000) : capacity_(capacity) {}

    void push(Transition t) {
        if (buf_.size() >= capacity_) buf_.pop_front();
        buf_.push_back(std::move(t));
    }

    std::size_t size() const { return buf_.size(); }

    const Transition& sample(Rng& rng) const {
        return buf_[static_cast<std::size_t>(rng.uniform_int(buf_.size()))];
    }

private:
    std::size_t capacity_;
    std::deque<Transition> buf_;
};

// R_t = 1 - mean clipped linear error.
inline double reward_from_errors(const std::vector<double>& errors) {
    if (errors.empty()) return 1.0;
    double acc = 0.0;
    for (double e : errors) acc += std::clamp(e, 0.0, 1.0);
    return 1.0 - acc / static_cast<double>(errors.size());
}

// ---------------------------------------------------------------------------
// Factored DQN
// ---------------------------------------------------------------------------

// The joint action space (J+1)^K is factored into K heads of J+1 values each;
// the network outputs all heads as one flat vector.
inline LayeredModel make_qnet(int num_users, int max_coalitions, int hidden, Rng& rng) {
    LayeredModel m;
    const int in = state_dim(num_users, max_coalitions);
    m.layers.push_back(nn::Layer::dense(in, hidden, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(hidden, hidden, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(hidden, num_users * (max_coalitions + 1)));
    nn::xavier_init(m, rng);
    return m;
}

inline int head_argmax(const std::vector<double>& q, int user, int num_actions) {
    int best = 0;
    double best_v = q[static_cast<std::size_t>(user) * num_actions];
    for (int a = 1; a < num_actions; ++a) {
        const double v = q[static_cast<std::size_t>(user) * num_actions + a];
        if (v > best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

// Per-user epsilon-greedy over the factored heads.
inline std::vector<int> dqn_select(const LayeredModel& qnet, const CoalitionPartition& state,
                                   double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("dqn_select: epsilon out of range");
    const int num_actions = state.max_coalitions + 1;
    const auto q = nn::forward(qnet, state_features(state));
    std::vector<int> action(static_cast<std::size_t>(state.num_users()));
    for (int u = 0; u < state.num_users(); ++u) {
        if (rng.uniform() < epsilon)
            action[static_cast<std::size_t>(u)] = static_cast<int>(rng.uniform_int(num_actions));
        else
            action[static_cast<std::size_t>(u)] = head_argmax(q, u, num_actions);
    }
    return action;
}

// One gradient step on the summed per-head TD loss. Returns the batch loss.
inline double dqn_train_step(const ReplayBuffer& buffer, LayeredModel& qnet,
                             const LayeredModel& target_net, double gamma, int batch_size,
                             double lr, int num_users, int max_coalitions, Rng& rng) {
    if (buffer.size() < static_cast<std::size_t>(batch_size))
        throw std::invalid_argument("dqn_train_step: insufficient buffer");
    const int num_actions = max_coalitions + 1;
    Gradient grad = Gradient::zeros_like(qnet);
    double loss = 0.0;
    nn::ForwardCache cache;
    const double inv_b = 1.0 / batch_size;
    for (int b = 0; b < batch_size; ++b) {
        const Transition& t = buffer.sample(rng);
        const auto q = nn::forward_cached(qnet, t.state, cache);
        const auto q_next = nn::forward(target_net, t.next_state);
        std::vector<double> dout(q.size(), 0.0);
        for (int u = 0; u < num_users; ++u) {
            double max_next = q_next[static_cast<std::size_t>(u) * num_actions];
            for (int a = 1; a < num_actions; ++a)
                max_next = std::max(max_next, q_next[static_cast<std::size_t>(u) * num_actions + a]);
            const double target = t.reward + (t.done ? 0.0 : gamma * max_next);
            const std::size_t idx =
                static_cast<std::size_t>(u) * num_actions + t.action[static_cast<std::size_t>(u)];
            const double err = q[idx] - target;
            loss += err * err * inv_b;
            dout[idx] = 2.0 * err * inv_b;
        }
        nn::backward_from_output(qnet, cache, std::move(dout), grad);
    }
    nn::sgd_step(qnet, grad, lr);
    return loss;
}

// ---------------------------------------------------------------------------
// Qmix
// ---------------------------------------------------------------------------

inline LayeredModel make_agent_net(int max_coalitions, int hidden, Rng& rng,
                                   bool full_sizes = false) {
    LayeredModel m;
    m.layers.push_back(
        nn::Layer::dense(obs_dim(max_coalitions, full_sizes), hidden, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(hidden, max_coalitions + 1));
    nn::xavier_init(m, rng);
    return m;
}

inline std::vector<double> qmix_agent_q(const LayeredModel& agent_net, const AgentObservation& obs) {
    return nn::forward(agent_net, obs.features);
}

enum class MixActivation { elu, identity };

// State-conditioned monotone mixing network. Hypernetwork outputs pass
// through an absolute value before being applied to the agent Q-values, so
// dQ_tot / dq_k >= 0 everywhere.
struct MixingNetwork {
    int num_agents = 0;
    int hidden = 8;
    MixActivation activation = MixActivation::elu;
    nn::Layer hyper_w1;  // state -> hidden*num_agents
    nn::Layer hyper_b1;  // state -> hidden
    nn::Layer hyper_w2;  // state -> hidden
    nn::Layer hyper_b2;  // state -> 1

    static MixingNetwork make(int num_agents, int state_dim, int hidden, Rng& rng,
                              MixActivation act = MixActivation::elu) {
        MixingNetwork mx;
        mx.num_agents = num_agents;
        mx.hidden = hidden;
        mx.activation = act;
        mx.hyper_w1 = nn::Layer::dense(state_dim, hidden * num_agents);
        mx.hyper_b1 = nn::Layer::dense(state_dim, hidden);
        mx.hyper_w2 = nn::Layer::dense(state_dim, hidden);
        mx.hyper_b2 = nn::Layer::dense(state_dim, 1);
        LayeredModel tmp;
        tmp.layers = {mx.hyper_w1, mx.hyper_b1, mx.hyper_w2, mx.hyper_b2};
        nn::xavier_init(tmp, rng);
        mx.hyper_w1 = tmp.layers[0];
        mx.hyper_b1 = tmp.layers[1];
        mx.hyper_w2 = tmp.layers[2];
        mx.hyper_b2 = tmp.layers[3];
        return mx;
    }

    struct Cache {
        std::vector<double> state, q;
        std::vector<double> w1, b1, w2, b2;  // raw hypernet outputs
        std::vector<double> pre_hidden, hidden_act;
        double q_tot = 0.0;
    };

    static double act_fn(MixActivation a, double u) {
        if (a == MixActivation::identity) return u;
        return u > 0.0 ? u : std::expm1(u);
    }
    static double act_deriv(MixActivation a, double u) {
        if (a == MixActivation::identity) return 1.0;
        return u > 0.0 ? 1.0 : std::exp(u);
    }

    double forward(const std::vector<double>& agent_q, const std::vector<double>& state,
                   Cache* cache = nullptr) const {
        if (static_cast<int>(agent_q.size()) != num_agents)
            throw std::invalid_argument("qmix_mix: agent count mismatch");
        std::vector<double> w1, b1, w2, b2;
        nn::detail::layer_forward(hyper_w1, state, w1);
        nn::detail::layer_forward(hyper_b1, state, b1);
        nn::detail::layer_forward(hyper_w2, state, w2);
        nn::detail::layer_forward(hyper_b2, state, b2);

        std::vector<double> pre(hidden, 0.0), hid(hidden, 0.0);
        for (int h = 0; h < hidden; ++h) {
            double acc = b1[h];
            for (int k = 0; k < num_agents; ++k)
                acc += std::abs(w1[static_cast<std::size_t>(h) * num_agents + k]) * agent_q[k];
            pre[h] = acc;
            hid[h] = act_fn(activation, acc);
        }
        double q_tot = b2[0];
        for (int h = 0; h < hidden; ++h) q_tot += std::abs(w2[h]) * hid[h];

        if (cache) {
            cache->state = state;
            cache->q = agent_q;
            cache->w1 = std::move(w1);
            cache->b1 = std::move(b1);
            cache->w2 = std::move(w2);
            cache->b2 = std::move(b2);
            cache->pre_hidden = std::move(pre);
            cache->hidden_act = std::move(hid);
            cache->q_tot = q_tot;
        }
        return q_tot;
    }

    struct Grads {
        Gradient::LayerGrad w1, b1, w2, b2;

        static Grads zeros_like(const MixingNetwork& mx) {
            Grads g;
            auto init = [](Gradient::LayerGrad& lg, const nn::Layer& l) {
                lg.weights.assign(l.weights.size(), 0.0);
                lg.bias.assign(l.bias.size(), 0.0);
            };
            init(g.w1, mx.hyper_w1);
            init(g.b1, mx.hyper_b1);
            init(g.w2, mx.hyper_w2);
            init(g.b2, mx.hyper_b2);
            return g;
        }
    };

    // Backpropagates d_qtot through the mixer; accumulates hypernetwork
    // gradients and returns dL/d(agent_q).
    std::vector<double> backward(const Cache& c, double d_qtot, Grads& grads) const {
        auto sign = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };

        std::vector<double> d_b2(1, d_qtot);
        std::vector<double> d_w2(hidden, 0.0);
        std::vector<double> d_hidden(hidden, 0.0);
        for (int h = 0; h < hidden; ++h) {
            d_w2[h] = d_qtot * c.hidden_act[h] * sign(c.w2[h]);
            d_hidden[h] = d_qtot * std::abs(c.w2[h]);
        }
        std::vector<double> d_pre(hidden, 0.0);
        for (int h = 0; h < hidden; ++h) d_pre[h] = d_hidden[h] * act_deriv(activation, c.pre_hidden[h]);

        std::vector<double> d_w1(static_cast<std::size_t>(hidden) * num_agents, 0.0);
        std::vector<double> d_q(num_agents, 0.0);
        for (int h = 0; h < hidden; ++h) {
            for (int k = 0; k < num_agents; ++k) {
                const std::size_t idx = static_cast<std::size_t>(h) * num_agents + k;
                d_w1[idx] = d_pre[h] * c.q[k] * sign(c.w1[idx]);
                d_q[k] += d_pre[h] * std::abs(c.w1[idx]);
            }
        }
        std::vector<double> dx;  // gradient w.r.t. state, unused
        nn::detail::layer_backward(hyper_w1, c.state, d_w1, grads.w1, dx);
        nn::detail::layer_backward(hyper_b1, c.state, d_pre, grads.b1, dx);
        nn::detail::layer_backward(hyper_w2, c.state, d_w2, grads.w2, dx);
        nn::detail::layer_backward(hyper_b2, c.state, d_b2, grads.b2, dx);
        return d_q;
    }

    void apply(const Grads& g, double lr) {
        auto step = [lr](nn::Layer& l, const Gradient::LayerGrad& lg) {
            for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= lr * lg.weights[i];
            for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= lr * lg.bias[i];
        };
        step(hyper_w1, g.w1);
        step(hyper_b1, g.b1);
        step(hyper_w2, g.w2);
        step(hyper_b2, g.b2);
    }
};

inline double qmix_mix(const MixingNetwork& mx, const std::vector<double>& agent_q_chosen,
                       const std::vector<double>& global_state) {
    return mx.forward(agent_q_chosen, global_state);
}

// Observations of every agent for a given partition.
inline std::vector<AgentObservation> all_observations(const CoalitionPartition& p,
                                                      bool full_sizes = false) {
    std::vector<AgentObservation> obs;
    obs.reserve(static_cast<std::size_t>(p.num_users()));
    for (int u = 0; u < p.num_users(); ++u) obs.push_back(agent_observation(p, u, full_sizes));
    return obs;
}

inline CoalitionPartition partition_from_features(const std::vector<double>& state, int num_users,
                                                  int max_coalitions) {
    CoalitionPartition p;
    p.max_coalitions = max_coalitions;
    p.assignment.assign(static_cast<std::size_t>(num_users), 0);
    for (int u = 0; u < num_users; ++u) {
        for (int a = 0; a <= max_coalitions; ++a)
            if (state[static_cast<std::size_t>(u) * (max_coalitions + 1) + a] > 0.5)
                p.assignment[static_cast<std::size_t>(u)] = a;
    }
    return p;
}

// One gradient step on the joint TD loss; gradients flow through the mixer
// into the (shared) agent network. Returns the batch loss.
inline double qmix_train_step(const ReplayBuffer& buffer, LayeredModel& agent_net,
                              MixingNetwork& mixing, const LayeredModel& target_agent_net,
                              const MixingNetwork& target_mixing, double gamma, int batch_size,
                              double lr, int num_users, int max_coalitions, Rng& rng,
                              bool full_sizes = false) {
    if (buffer.size() < static_cast<std::size_t>(batch_size))
        throw std::invalid_argument("qmix_train_step: insufficient buffer");
    Gradient agent_grad = Gradient::zeros_like(agent_net);
    MixingNetwork::Grads mix_grad = MixingNetwork::Grads::zeros_like(mixing);
    double loss = 0.0;
    const double inv_b = 1.0 / batch_size;
    const int num_actions = max_coalitions + 1;

    for (int b = 0; b < batch_size; ++b) {
        const Transition& t = buffer.sample(rng);
        const CoalitionPartition cur = partition_from_features(t.state, num_users, max_coalitions);
        const CoalitionPartition nxt = partition_from_features(t.next_state, num_users, max_coalitions);

        // chosen-action agent values with caches for backprop
        std::vector<nn::ForwardCache> caches(static_cast<std::size_t>(num_users));
        std::vector<double> q_chosen(static_cast<std::size_t>(num_users));
        for (int u = 0; u < num_users; ++u) {
            const auto obs = agent_observation(cur, u, full_sizes);
            const auto q = nn::forward_cached(agent_net, obs.features, caches[u]);
            q_chosen[u] = q[static_cast<std::size_t>(t.action[u])];
        }
        MixingNetwork::Cache mix_cache;
        const double q_tot = mixing.forward(q_chosen, t.state, &mix_cache);

        // greedy target value
        std::vector<double> q_next(static_cast<std::size_t>(num_users));
        for (int u = 0; u < num_users; ++u) {
            const auto obs = agent_observation(nxt, u, full_sizes);
            const auto q = qmix_agent_q(target_agent_net, obs);
            q_next[u] = *std::max_element(q.begin(), q.end());
        }
        const double q_tot_next = target_mixing.forward(q_next, t.next_state);
        const double target = t.reward + (t.done ? 0.0 : gamma * q_tot_next);

        const double err = q_tot - target;
        loss += err * err * inv_b;
        const double d_qtot = 2.0 * err * inv_b;
        const std::vector<double> d_q = mixing.backward(mix_cache, d_qtot, mix_grad);
        for (int u = 0; u < num_users; ++u) {
            std::vector<double> dout(static_cast<std::size_t>(num_actions), 0.0);
            dout[static_cast<std::size_t>(t.action[u])] = d_q[u];
            nn::backward_from_output(agent_net, caches[u], std::move(dout), agent_grad);
        }
    }
    nn::sgd_step(agent_net, agent_grad, lr);
    mixing.apply(mix_grad, lr);
    return loss;
}

// Decentralized execution: each agent picks from its own observation only.
inline std::vector<int> qmix_select(const LayeredModel& agent_net,
                                    const std::vector<AgentObservation>& observations,
                                    double epsilon, int max_coalitions, Rng& rng) {
    std::vector<int> action(observations.size());
    const int num_actions = max_coalitions + 1;
    for (std::size_t u = 0; u < observations.size(); ++u) {
        if (rng.uniform() < epsilon) {
            action[u] = static_cast<int>(rng.uniform_int(num_actions));
        } else {
            const auto q = qmix_agent_q(agent_net, observations[u]);
            action[u] = static_cast<int>(
                std::distance(q.begin(), std::max_element(q.begin(), q.end())));
        }
    }
    return action;
}

// ---------------------------------------------------------------------------
// CFFL outer loop
// ---------------------------------------------------------------------------

enum class Backend { dqn, qmix };

// Evaluates a coalition partition to per-user errors in [0,1].
class Environment {
public:
    virtual ~Environment() = default;
    virtual std::vector<double> evaluate(const CoalitionPartition& partition) = 0;
    // bytes exchanged by the FL inner loop for the last evaluation (0 for surrogates)
    virtual std::size_t last_bytes_exchanged() const { return 0; }
};

class SurrogateEnvironment : public Environment {
public:
    explicit SurrogateEnvironment(coalition::SurrogateOracle oracle) : oracle_(std::move(oracle)) {}
    std::vector<double> evaluate(const CoalitionPartition& p) override { return oracle_.errors(p); }

private:
    coalition::SurrogateOracle oracle_;
};

struct CfflOptions {
    int num_users = 6;
    int max_coalitions = 2;
    int epochs = 500;
    double gamma = 0.9;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int target_sync = 50;
    std::size_t replay_capacity = 10000;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_fraction = 0.6;  // epsilon decays over this fraction of epochs
    int hidden = 64;
    int mix_hidden = 8;
    // qmix observation content: own coalition size only (default) or all sizes
    bool full_size_obs = false;
    std::uint64_t seed = 1;
};

struct EpochRecord {
    int epoch = 0;
    std::vector<int> action;
    double reward = 0.0;
    double mean_error = 0.0;
    std::vector<double> user_errors;
    std::size_t bytes_exchanged = 0;
};

inline double epsilon_at(const CfflOptions& opt, int epoch) {
    const double horizon = std::max(1.0, opt.eps_fraction * opt.epochs);
    if (epoch >= horizon) return opt.eps_end;
    return opt.eps_start + (epoch / horizon) * (opt.eps_end - opt.eps_start);
}

inline std::vector<EpochRecord> run_cffl(const CfflOptions& opt, Backend backend,
                                         Environment& env) {
    Rng init_rng = Rng::stream(opt.seed, 0x1417);
    Rng act_rng = Rng::stream(opt.seed, 0xac7);
    Rng train_rng = Rng::stream(opt.seed, 0x7a41);

    LayeredModel qnet, target_qnet, agent_net, target_agent_net;
    MixingNetwork mixing, target_mixing;
    if (backend == Backend::dqn) {
        qnet = make_qnet(opt.num_users, opt.max_coalitions, opt.hidden, init_rng);
        target_qnet = qnet;
    } else {
        agent_net = make_agent_net(opt.max_coalitions, opt.hidden, init_rng, opt.full_size_obs);
        target_agent_net = agent_net;
        mixing = MixingNetwork::make(opt.num_users, state_dim(opt.num_users, opt.max_coalitions),
                                     opt.mix_hidden, init_rng);
        target_mixing = mixing;
    }

    ReplayBuffer buffer(opt.replay_capacity);
    CoalitionPartition state;
    state.max_coalitions = opt.max_coalitions;
    state.assignment.assign(static_cast<std::size_t>(opt.num_users), 0);

    std::vector<EpochRecord> history;
    history.reserve(static_cast<std::size_t>(opt.epochs));
    int steps = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const double eps = epsilon_at(opt, epoch);
        std::vector<int> action;
        if (backend == Backend::dqn) {
            action = dqn_select(qnet, state, eps, act_rng);
        } else {
            action = qmix_select(agent_net, all_observations(state, opt.full_size_obs), eps,
                                 opt.max_coalitions, act_rng);
        }

        CoalitionPartition next = state;
        next.assignment = action;
        const std::vector<double> errors = env.evaluate(next);
        const double reward = reward_from_errors(errors);

        Transition t;
        t.state = state_features(state);
        t.action = action;
        t.reward = reward;
        t.next_state = state_features(next);
        buffer.push(std::move(t));

        if (buffer.size() >= static_cast<std::size_t>(opt.batch_size)) {
            if (backend == Backend::dqn) {
                dqn_train_step(buffer, qnet, target_qnet, opt.gamma, opt.batch_size,
                               opt.learning_rate, opt.num_users, opt.max_coalitions, train_rng);
            } else {
                qmix_train_step(buffer, agent_net, mixing, target_agent_net, target_mixing,
                                opt.gamma, opt.batch_size, opt.learning_rate, opt.num_users,
                                opt.max_coalitions, train_rng, opt.full_size_obs);
            }
            ++steps;
            if (steps % opt.target_sync == 0) {
                if (backend == Backend::dqn)
                    target_qnet = qnet;
                else {
                    target_agent_net = agent_net;
                    target_mixing = mixing;
                }
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.action = action;
        rec.reward = reward;
        double mean_err = 0.0;
        for (double e : errors) mean_err += std::clamp(e, 0.0, 1.0);
        rec.mean_error = errors.empty() ? 0.0 : mean_err / errors.size();
        rec.user_errors = errors;
        rec.bytes_exchanged = env.last_bytes_exchanged();
        history.push_back(std::move(rec));

        state = next;
    }
    return history;
}

}  // namespace cffl::drl
