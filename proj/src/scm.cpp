#include "adpc/scm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>

namespace adpc::scm {

namespace {

constexpr double kRowSumTol = 1e-12;

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ", ";
        out += parts[i];
    }
    return out;
}

void check_enumerable(const DiscreteScm& scm) {
    if (scm.joint_states() > scm.max_joint_states)
        throw StateSpaceTooLarge("joint state space " +
                                 std::to_string(scm.joint_states()) +
                                 " exceeds limit " +
                                 std::to_string(scm.max_joint_states));
}

// Walks every full assignment in declaration order, invoking fn(state, p)
// with the factorized joint probability.
void enumerate_joint(const DiscreteScm& scm,
                     const std::function<void(const std::vector<int>&, double)>& fn) {
    check_enumerable(scm);
    const size_t n = scm.n_vars();
    std::vector<int> state(n, 0);
    while (true) {
        double p = 1.0;
        for (int v : scm.topo_order) {
            size_t row = 0;
            for (int par : scm.parents[static_cast<size_t>(v)])
                row = row * static_cast<size_t>(scm.card(par)) +
                      static_cast<size_t>(state[static_cast<size_t>(par)]);
            p *= scm.cpds[static_cast<size_t>(v)][row]
                         [static_cast<size_t>(state[static_cast<size_t>(v)])];
            if (p == 0.0) break;
        }
        fn(state, p);
        size_t i = n;
        while (i > 0) {
            --i;
            if (++state[i] < scm.card(static_cast<int>(i))) break;
            state[i] = 0;
            if (i == 0) return;
        }
        if (n == 0) return;
    }
}

std::vector<int> resolve_set(const DiscreteScm& scm, const std::set<std::string>& names) {
    std::vector<int> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(scm.index(n));
    return out;
}

// Z together with every ancestor of Z, over the full graph.
std::vector<char> ancestral_closure(const DiscreteScm& scm, const std::vector<int>& z) {
    std::vector<char> in(scm.n_vars(), 0);
    std::deque<int> queue(z.begin(), z.end());
    for (int v : z) in[static_cast<size_t>(v)] = 1;
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        for (int p : scm.parents[static_cast<size_t>(v)])
            if (!in[static_cast<size_t>(p)]) {
                in[static_cast<size_t>(p)] = 1;
                queue.push_back(p);
            }
    }
    return in;
}

std::vector<std::vector<int>> children_lists(const DiscreteScm& scm) {
    std::vector<std::vector<int>> ch(scm.n_vars());
    for (size_t v = 0; v < scm.n_vars(); ++v)
        for (int p : scm.parents[v]) ch[static_cast<size_t>(p)].push_back(static_cast<int>(v));
    return ch;
}

// Active-trail reachability (Bayes-ball). Direction encodes how a node was
// entered: kFromChild may continue to both parents and children; kFromParent
// continues to children when the node is unobserved and bounces to parents
// only when the collider is activated (node or a descendant in Z).
enum Dir : int { kFromChild = 0, kFromParent = 1 };

struct TrailQuery {
    std::vector<std::pair<int, Dir>> starts;
    std::vector<char> blocked_z;    // membership in Z
    std::vector<char> anc_z;        // Z plus ancestors of Z (full graph)
    int excluded_node = -1;         // never traversed (trail endpoint removal)
};

bool trail_reaches(const DiscreteScm& scm, const TrailQuery& q,
                   const std::vector<char>& targets) {
    auto children = children_lists(scm);
    std::vector<std::array<char, 2>> seen(scm.n_vars(), {0, 0});
    std::deque<std::pair<int, Dir>> frontier(q.starts.begin(), q.starts.end());
    while (!frontier.empty()) {
        auto [v, dir] = frontier.front();
        frontier.pop_front();
        if (v == q.excluded_node) continue;
        if (seen[static_cast<size_t>(v)][dir]) continue;
        seen[static_cast<size_t>(v)][dir] = 1;
        if (targets[static_cast<size_t>(v)]) return true;
        const bool observed = q.blocked_z[static_cast<size_t>(v)] != 0;
        if (dir == kFromChild) {
            if (!observed) {
                for (int p : scm.parents[static_cast<size_t>(v)])
                    frontier.emplace_back(p, kFromChild);
                for (int c : children[static_cast<size_t>(v)])
                    frontier.emplace_back(c, kFromParent);
            }
        } else {
            if (!observed)
                for (int c : children[static_cast<size_t>(v)])
                    frontier.emplace_back(c, kFromParent);
            if (q.anc_z[static_cast<size_t>(v)])  // collider opened by Z
                for (int p : scm.parents[static_cast<size_t>(v)])
                    frontier.emplace_back(p, kFromChild);
        }
    }
    return false;
}

// True when some backdoor path (first edge into `source`) reaches a target
// given Z. The source itself is removed from the traversal; the ancestral
// closure for collider activation still uses the full graph.
bool backdoor_reachable(const DiscreteScm& scm, int source,
                        const std::vector<char>& targets,
                        const std::vector<int>& given) {
    TrailQuery q;
    q.blocked_z.assign(scm.n_vars(), 0);
    for (int z : given) q.blocked_z[static_cast<size_t>(z)] = 1;
    q.anc_z = ancestral_closure(scm, given);
    q.excluded_node = source;
    for (int p : scm.parents[static_cast<size_t>(source)])
        q.starts.emplace_back(p, kFromChild);
    return trail_reaches(scm, q, targets);
}

void require_disjoint(const std::set<std::string>& a, const std::set<std::string>& b,
                      const char* what) {
    for (const auto& n : a)
        if (b.count(n)) throw InvalidAdjustmentSet(std::string(what) + ": '" + n +
                                                   "' appears in both sets");
}

}  // namespace

int DiscreteScm::index(const std::string& name) const {
    for (size_t i = 0; i < variables.size(); ++i)
        if (variables[i] == name) return static_cast<int>(i);
    throw UnknownVariable("unknown variable: " + name);
}

double DiscreteScm::joint_states() const {
    double s = 1.0;
    for (int c : cardinalities) s *= static_cast<double>(c);
    return s;
}

DiscreteScm build_scm(const std::vector<VariableSpec>& vars) {
    DiscreteScm scm;
    for (const auto& v : vars) {
        if (std::find(scm.variables.begin(), scm.variables.end(), v.name) !=
            scm.variables.end())
            throw UnknownVariable("duplicate variable name: " + v.name);
        scm.variables.push_back(v.name);
        if (v.cardinality < 2)
            throw ValueOutOfRange("variable '" + v.name + "' needs >= 2 states");
        scm.cardinalities.push_back(v.cardinality);
    }
    for (const auto& v : vars) {
        std::vector<int> ps;
        for (const auto& p : v.parents) ps.push_back(scm.index(p));
        scm.parents.push_back(std::move(ps));
    }

    // Kahn's algorithm; leftover nodes witness a cycle.
    std::vector<int> indegree(scm.n_vars(), 0);
    for (size_t v = 0; v < scm.n_vars(); ++v)
        indegree[v] = static_cast<int>(scm.parents[v].size());
    std::deque<int> ready;
    for (size_t v = 0; v < scm.n_vars(); ++v)
        if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
    auto children = children_lists(scm);
    while (!ready.empty()) {
        int v = ready.front();
        ready.pop_front();
        scm.topo_order.push_back(v);
        for (int c : children[static_cast<size_t>(v)])
            if (--indegree[static_cast<size_t>(c)] == 0) ready.push_back(c);
    }
    if (scm.topo_order.size() != scm.n_vars()) {
        std::vector<std::string> cyclic;
        for (size_t v = 0; v < scm.n_vars(); ++v)
            if (indegree[v] > 0) cyclic.push_back(scm.variables[v]);
        throw CycleDetected("cycle among: " + join(cyclic));
    }

    for (size_t v = 0; v < scm.n_vars(); ++v) {
        const auto& spec = vars[v];
        size_t expected_rows = 1;
        for (int p : scm.parents[v]) expected_rows *= static_cast<size_t>(scm.card(p));
        if (spec.cpd.size() != expected_rows)
            throw CpdShapeMismatch("cpd for '" + spec.name + "': expected " +
                                   std::to_string(expected_rows) + " rows, got " +
                                   std::to_string(spec.cpd.size()));
        for (const auto& row : spec.cpd) {
            if (row.size() != static_cast<size_t>(spec.cardinality))
                throw CpdShapeMismatch("cpd row width for '" + spec.name + "'");
            double sum = 0.0;
            for (double x : row) {
                if (x < 0.0)
                    throw CpdRowNotNormalized("negative probability in cpd of '" +
                                              spec.name + "'");
                sum += x;
            }
            if (std::abs(sum - 1.0) > kRowSumTol)
                throw CpdRowNotNormalized("cpd row of '" + spec.name + "' sums to " +
                                          std::to_string(sum));
        }
        scm.cpds.push_back(spec.cpd);
    }
    return scm;
}

double joint_probability(const DiscreteScm& scm, const Evidence& assignment) {
    std::vector<int> state(scm.n_vars());
    for (size_t v = 0; v < scm.n_vars(); ++v) {
        auto it = assignment.find(scm.variables[v]);
        if (it == assignment.end())
            throw MissingAssignment("assignment misses variable: " + scm.variables[v]);
        if (it->second < 0 || it->second >= scm.card(static_cast<int>(v)))
            throw ValueOutOfRange("value for " + scm.variables[v]);
        state[v] = it->second;
    }
    double p = 1.0;
    for (int v : scm.topo_order) {
        size_t row = 0;
        for (int par : scm.parents[static_cast<size_t>(v)])
            row = row * static_cast<size_t>(scm.card(par)) +
                  static_cast<size_t>(state[static_cast<size_t>(par)]);
        p *= scm.cpds[static_cast<size_t>(v)][row]
                     [static_cast<size_t>(state[static_cast<size_t>(v)])];
    }
    return p;
}

namespace {

Distribution normalized(std::string variable, std::vector<double> probs) {
    double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (sum <= 0.0)
        throw ZeroProbabilityEvidence("event has zero probability for " + variable);
    for (double& p : probs) p /= sum;
    return Distribution{std::move(variable), std::move(probs)};
}

}  // namespace

Distribution conditional(const DiscreteScm& scm, const std::string& target,
                         const Evidence& evidence) {
    int t = scm.index(target);
    std::vector<std::pair<int, int>> ev;
    for (const auto& [name, value] : evidence) {
        int v = scm.index(name);
        if (value < 0 || value >= scm.card(v))
            throw ValueOutOfRange("evidence value for " + name);
        ev.emplace_back(v, value);
    }
    std::vector<double> acc(static_cast<size_t>(scm.card(t)), 0.0);
    enumerate_joint(scm, [&](const std::vector<int>& state, double p) {
        for (const auto& [v, val] : ev)
            if (state[static_cast<size_t>(v)] != val) return;
        acc[static_cast<size_t>(state[static_cast<size_t>(t)])] += p;
    });
    return normalized(target, std::move(acc));
}

bool d_separated(const DiscreteScm& scm, const std::set<std::string>& set_a,
                 const std::set<std::string>& set_b,
                 const std::set<std::string>& given) {
    require_disjoint(set_a, set_b, "d_separated");
    require_disjoint(set_a, given, "d_separated");
    require_disjoint(set_b, given, "d_separated");
    auto a = resolve_set(scm, set_a);
    auto b = resolve_set(scm, set_b);
    auto z = resolve_set(scm, given);
    TrailQuery q;
    q.blocked_z.assign(scm.n_vars(), 0);
    for (int v : z) q.blocked_z[static_cast<size_t>(v)] = 1;
    q.anc_z = ancestral_closure(scm, z);
    for (int v : a) q.starts.emplace_back(v, kFromChild);
    std::vector<char> targets(scm.n_vars(), 0);
    for (int v : b) targets[static_cast<size_t>(v)] = 1;
    return !trail_reaches(scm, q, targets);
}

DiscreteScm intervene(const DiscreteScm& scm, const std::string& variable, int value) {
    int v = scm.index(variable);
    if (value < 0 || value >= scm.card(v))
        throw ValueOutOfRange("do(" + variable + "=" + std::to_string(value) + ")");
    DiscreteScm out = scm;
    out.parents[static_cast<size_t>(v)].clear();
    std::vector<double> point(static_cast<size_t>(scm.card(v)), 0.0);
    point[static_cast<size_t>(value)] = 1.0;
    out.cpds[static_cast<size_t>(v)] = {std::move(point)};
    // Severing edges cannot create a cycle; recompute the order anyway so the
    // stored invariant stays self-consistent.
    std::vector<VariableSpec> specs;
    for (size_t i = 0; i < out.n_vars(); ++i) {
        VariableSpec s;
        s.name = out.variables[i];
        s.cardinality = out.cardinalities[i];
        for (int p : out.parents[i]) s.parents.push_back(out.variables[static_cast<size_t>(p)]);
        s.cpd = out.cpds[i];
        specs.push_back(std::move(s));
    }
    DiscreteScm rebuilt = build_scm(specs);
    rebuilt.max_joint_states = scm.max_joint_states;
    return rebuilt;
}

Distribution interventional_oracle(const DiscreteScm& scm, const std::string& target,
                                   const std::string& do_var, int do_value) {
    return conditional(intervene(scm, do_var, do_value), target);
}

Distribution backdoor_adjust(const DiscreteScm& scm, const std::string& target,
                             const std::string& cause, int cause_value,
                             const std::set<std::string>& adjust_set) {
    if (adjust_set.count(target) || adjust_set.count(cause))
        throw InvalidAdjustmentSet("adjust set overlaps cause or target");
    int t = scm.index(target);
    int x = scm.index(cause);
    if (cause_value < 0 || cause_value >= scm.card(x))
        throw ValueOutOfRange("cause value");
    auto adjust = resolve_set(scm, adjust_set);

    size_t n_cfg = 1;
    for (int v : adjust) n_cfg *= static_cast<size_t>(scm.card(v));
    auto cfg_of = [&](const std::vector<int>& state) {
        size_t idx = 0;
        for (int v : adjust)
            idx = idx * static_cast<size_t>(scm.card(v)) +
                  static_cast<size_t>(state[static_cast<size_t>(v)]);
        return idx;
    };

    std::vector<double> p_s(n_cfg, 0.0), p_xs(n_cfg, 0.0);
    std::vector<std::vector<double>> p_txs(
        n_cfg, std::vector<double>(static_cast<size_t>(scm.card(t)), 0.0));
    enumerate_joint(scm, [&](const std::vector<int>& state, double p) {
        size_t s = cfg_of(state);
        p_s[s] += p;
        if (state[static_cast<size_t>(x)] != cause_value) return;
        p_xs[s] += p;
        p_txs[s][static_cast<size_t>(state[static_cast<size_t>(t)])] += p;
    });

    std::vector<double> result(static_cast<size_t>(scm.card(t)), 0.0);
    for (size_t s = 0; s < n_cfg; ++s) {
        if (p_s[s] == 0.0) continue;  // configuration never observed: weight 0
        if (p_xs[s] == 0.0)
            throw ZeroProbabilityEvidence(
                "cause value never observed under some adjust configuration");
        for (size_t k = 0; k < result.size(); ++k)
            result[k] += p_s[s] * p_txs[s][k] / p_xs[s];
    }
    return normalized(target, std::move(result));
}

FrontdoorReport check_frontdoor_criterion(const DiscreteScm& scm,
                                          const std::string& cause,
                                          const std::string& target,
                                          const std::set<std::string>& mediator_set) {
    require_disjoint({cause}, mediator_set, "front-door criterion");
    require_disjoint({target}, mediator_set, "front-door criterion");
    require_disjoint({cause}, {target}, "front-door criterion");
    int x = scm.index(cause);
    int y = scm.index(target);
    auto mediators = resolve_set(scm, mediator_set);
    std::vector<char> in_m(scm.n_vars(), 0);
    for (int m : mediators) in_m[static_cast<size_t>(m)] = 1;

    FrontdoorReport report;
    auto children = children_lists(scm);

    // (1) every directed cause -> target path passes through the mediator set
    {
        std::vector<char> seen(scm.n_vars(), 0);
        std::deque<int> frontier{x};
        seen[static_cast<size_t>(x)] = 1;
        bool escaped = false;
        while (!frontier.empty() && !escaped) {
            int v = frontier.front();
            frontier.pop_front();
            for (int c : children[static_cast<size_t>(v)]) {
                if (in_m[static_cast<size_t>(c)]) continue;  // intercepted here
                if (c == y) {
                    escaped = true;
                    break;
                }
                if (!seen[static_cast<size_t>(c)]) {
                    seen[static_cast<size_t>(c)] = 1;
                    frontier.push_back(c);
                }
            }
        }
        report.mediator_intercepts_all_paths = !escaped;
    }

    // (2) no unblocked backdoor path from cause to any mediator (empty Z)
    report.no_backdoor_cause_to_mediator = !backdoor_reachable(scm, x, in_m, {});

    // (3) backdoor paths from each mediator to target blocked by {cause}
    {
        std::vector<char> target_only(scm.n_vars(), 0);
        target_only[static_cast<size_t>(y)] = 1;
        bool all_blocked = true;
        for (int m : mediators)
            if (backdoor_reachable(scm, m, target_only, {x})) {
                all_blocked = false;
                break;
            }
        report.backdoor_mediator_to_target_blocked = all_blocked;
    }
    return report;
}

Distribution frontdoor_adjust(const DiscreteScm& scm, const std::string& target,
                              const std::string& cause, int cause_value,
                              const std::string& mediator) {
    int t = scm.index(target);
    int x = scm.index(cause);
    int m = scm.index(mediator);
    if (cause_value < 0 || cause_value >= scm.card(x))
        throw ValueOutOfRange("cause value");

    const size_t nx = static_cast<size_t>(scm.card(x));
    const size_t nm = static_cast<size_t>(scm.card(m));
    const size_t nt = static_cast<size_t>(scm.card(t));
    std::vector<double> p_x(nx, 0.0);
    std::vector<std::vector<double>> p_mx(nm, std::vector<double>(nx, 0.0));
    std::vector<std::vector<std::vector<double>>> p_tmx(
        nt, std::vector<std::vector<double>>(nm, std::vector<double>(nx, 0.0)));
    enumerate_joint(scm, [&](const std::vector<int>& state, double p) {
        size_t sx = static_cast<size_t>(state[static_cast<size_t>(x)]);
        size_t sm = static_cast<size_t>(state[static_cast<size_t>(m)]);
        size_t st = static_cast<size_t>(state[static_cast<size_t>(t)]);
        p_x[sx] += p;
        p_mx[sm][sx] += p;
        p_tmx[st][sm][sx] += p;
    });

    if (p_x[static_cast<size_t>(cause_value)] == 0.0)
        throw ZeroProbabilityEvidence("cause value never observed");

    std::vector<double> result(nt, 0.0);
    for (size_t sm = 0; sm < nm; ++sm) {
        double w = p_mx[sm][static_cast<size_t>(cause_value)] /
                   p_x[static_cast<size_t>(cause_value)];
        if (w == 0.0) continue;
        // E_{x' ~ P(X)} P(target | x', m), restricted to the observed support
        // of (x', m) and renormalized; exact formula under full positivity.
        double support_mass = 0.0;
        std::vector<double> inner(nt, 0.0);
        for (size_t sx = 0; sx < nx; ++sx) {
            if (p_mx[sm][sx] == 0.0) continue;
            support_mass += p_x[sx];
            for (size_t st = 0; st < nt; ++st)
                inner[st] += p_x[sx] * p_tmx[st][sm][sx] / p_mx[sm][sx];
        }
        if (support_mass == 0.0)
            throw ZeroProbabilityEvidence("mediator state unsupported");
        for (size_t st = 0; st < nt; ++st) result[st] += w * inner[st] / support_mass;
    }
    return normalized(target, std::move(result));
}

DiscreteScm scm_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("variables") || !doc.contains("cpds"))
        throw ParseError("scm document needs 'variables' and 'cpds'");
    std::vector<VariableSpec> specs;
    for (const auto& v : doc.at("variables")) {
        VariableSpec s;
        s.name = v.at("name").get<std::string>();
        s.cardinality = v.at("cardinality").get<int>();
        specs.push_back(std::move(s));
    }
    const auto& cpds = doc.at("cpds");
    for (auto& s : specs) {
        if (!cpds.contains(s.name))
            throw ParseError("missing cpd for variable: " + s.name);
        const auto& c = cpds.at(s.name);
        s.parents = c.value("parents", std::vector<std::string>{});
        s.cpd = c.at("table").get<std::vector<std::vector<double>>>();
    }
    DiscreteScm scm = build_scm(specs);
    if (doc.contains("edges")) {
        std::set<std::pair<std::string, std::string>> declared, actual;
        for (const auto& e : doc.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw ParseError("edge must be a pair");
            declared.insert({e[0].get<std::string>(), e[1].get<std::string>()});
        }
        for (size_t v = 0; v < scm.n_vars(); ++v)
            for (int p : scm.parents[v])
                actual.insert({scm.variables[static_cast<size_t>(p)], scm.variables[v]});
        if (declared != actual)
            throw ParseError("edges do not match cpd parent lists");
    }
    return scm;
}

nlohmann::json scm_to_json(const DiscreteScm& scm) {
    nlohmann::json vars = nlohmann::json::array();
    nlohmann::json edges = nlohmann::json::array();
    nlohmann::json cpds = nlohmann::json::object();
    for (size_t v = 0; v < scm.n_vars(); ++v) {
        vars.push_back({{"name", scm.variables[v]},
                        {"cardinality", scm.cardinalities[v]}});
        std::vector<std::string> parent_names;
        for (int p : scm.parents[v]) {
            parent_names.push_back(scm.variables[static_cast<size_t>(p)]);
            edges.push_back({scm.variables[static_cast<size_t>(p)], scm.variables[v]});
        }
        cpds[scm.variables[v]] = {{"parents", parent_names}, {"table", scm.cpds[v]}};
    }
    return {{"variables", vars}, {"edges", edges}, {"cpds", cpds}};
}

}  // namespace adpc::scm
