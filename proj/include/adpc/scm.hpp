#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adpc/errors.hpp"

namespace adpc::scm {

// Finite-state structural causal model: a DAG over named variables with one
// conditional probability table per variable. All query operations are exact
// (full-joint enumeration) and pure.
struct DiscreteScm {
    std::vector<std::string> variables;        // declaration order
    std::vector<int> cardinalities;            // per variable, >= 2
    std::vector<std::vector<int>> parents;     // indices, declared order kept
    // cpds[v]: rows indexed by the mixed-radix parent configuration (first
    // parent most significant), each row a distribution over v's states.
    std::vector<std::vector<std::vector<double>>> cpds;
    std::vector<int> topo_order;
    // Enumeration-based queries refuse joint spaces larger than this.
    double max_joint_states = 1e6;

    int index(const std::string& name) const;
    int card(int v) const { return cardinalities[static_cast<size_t>(v)]; }
    size_t n_vars() const { return variables.size(); }
    double joint_states() const;
};

struct VariableSpec {
    std::string name;
    int cardinality = 2;
    std::vector<std::string> parents;
    std::vector<std::vector<double>> cpd;  // one row per parent configuration
};

struct Distribution {
    std::string variable;
    std::vector<double> probs;
};

using Evidence = std::map<std::string, int>;

struct FrontdoorReport {
    bool mediator_intercepts_all_paths = false;
    bool no_backdoor_cause_to_mediator = false;
    bool backdoor_mediator_to_target_blocked = false;
    bool satisfied() const {
        return mediator_intercepts_all_paths && no_backdoor_cause_to_mediator &&
               backdoor_mediator_to_target_blocked;
    }
};

// Validates and assembles the model: unique names, declared parents, acyclic
// graph, CPD shape = product of parent cardinalities, rows normalized to
// 1e-12. Throws CycleDetected / CpdShapeMismatch / CpdRowNotNormalized /
// UnknownVariable / ValueOutOfRange.
DiscreteScm build_scm(const std::vector<VariableSpec>& vars);

// Product of CPD entries along the topological order; assignment must cover
// every variable (MissingAssignment otherwise).
double joint_probability(const DiscreteScm& scm, const Evidence& assignment);

// P(target | evidence) by full-joint enumeration; ZeroProbabilityEvidence if
// the evidence event has no mass.
Distribution conditional(const DiscreteScm& scm, const std::string& target,
                         const Evidence& evidence = {});

// Standard d-separation of two disjoint sets given a third.
bool d_separated(const DiscreteScm& scm, const std::set<std::string>& set_a,
                 const std::set<std::string>& set_b,
                 const std::set<std::string>& given = {});

// Graph mutilation do(variable = value): parents removed, CPD replaced by a
// point mass. Pure; the input model is untouched.
DiscreteScm intervene(const DiscreteScm& scm, const std::string& variable, int value);

// P(target | do(do_var = do_value)) on the mutilated graph; the ground truth
// that both adjustment formulas are checked against.
Distribution interventional_oracle(const DiscreteScm& scm, const std::string& target,
                                   const std::string& do_var, int do_value);

// Backdoor adjustment: sum_s P(target | cause, S=s) P(S=s) over the joint
// configurations of adjust_set.
Distribution backdoor_adjust(const DiscreteScm& scm, const std::string& target,
                             const std::string& cause, int cause_value,
                             const std::set<std::string>& adjust_set);

// The three front-door conditions, each reported separately: (1) the
// mediator set intercepts every directed cause->target path, (2) no
// unblocked backdoor path from cause to the mediator set, (3) all backdoor
// paths from the mediator set to target are blocked by conditioning on the
// cause.
FrontdoorReport check_frontdoor_criterion(const DiscreteScm& scm,
                                          const std::string& cause,
                                          const std::string& target,
                                          const std::set<std::string>& mediator_set);

// Front-door adjustment with a single mediator:
//   sum_m P(m|x) sum_x' P(target | x', m) P(x')
// computed from the observational joint only. Inner expectations are
// restricted (and renormalized) to the x' support of each mediator state so
// that deterministic mediators stay well-defined.
Distribution frontdoor_adjust(const DiscreteScm& scm, const std::string& target,
                              const std::string& cause, int cause_value,
                              const std::string& mediator);

// Document format: {"variables":[{"name","cardinality"}...],
// "edges":[["parent","child"]...], "cpds":{var:{"parents":[...],
// "table":[[...]...]}}}. Edges must agree with the per-variable parent lists.
DiscreteScm scm_from_json(const nlohmann::json& doc);
nlohmann::json scm_to_json(const DiscreteScm& scm);

}  // namespace adpc::scm
