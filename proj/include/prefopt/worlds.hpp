#pragma once

#include "prefopt/world.hpp"

namespace prefopt::worlds {

// Single prompt, three responses: pi* = (0.6, 0.3, 0.1), pi_ref = (0.4, 0.4, 0.2).
inline DiscreteWorld interpolation() {
    DiscreteWorld w;
    w.prompt_names = {"x"};
    w.prompt_mass = {1.0};
    w.response_names = {{"y_a", "y_b", "y_c"}};
    w.pi_star = {{0.6, 0.3, 0.1}};
    w.pi_ref = {{0.4, 0.4, 0.2}};
    w.validate();
    return w;
}

// x_g: pi_ref = pi* (already optimal); x_b: pi_ref far from pi*.
inline DiscreteWorld preservation() {
    DiscreteWorld w;
    w.prompt_names = {"x_g", "x_b"};
    w.prompt_mass = {0.5, 0.5};
    w.response_names = {{"y_ga", "y_gb", "y_gc"}, {"y_ba", "y_bb", "y_bc"}};
    w.pi_star = {{0.6, 0.3, 0.1}, {0.4, 0.2, 0.4}};
    w.pi_ref = {{0.6, 0.3, 0.1}, {0.6, 0.2, 0.2}};
    w.validate();
    return w;
}

// Two responses per prompt with a uniform reference; at lambda = 1 the RLHF
// and DPO objectives reduce to backward and forward KL to pi*.
inline DiscreteWorld kl_duality() {
    DiscreteWorld w;
    w.prompt_names = {"x1", "x2"};
    w.prompt_mass = {0.3, 0.7};
    w.response_names = {{"y1", "y2"}, {"y1", "y2"}};
    w.pi_star = {{0.7, 0.3}, {0.2, 0.8}};
    w.pi_ref = {{0.5, 0.5}, {0.5, 0.5}};
    w.validate();
    return w;
}

}  // namespace prefopt::worlds
