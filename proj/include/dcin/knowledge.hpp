#pragma once

#include <string>
#include <vector>

#include "dcin/matrix.hpp"
#include "dcin/tensor.hpp"

namespace dcin::knowledge {

// A_tilde = D^{-1/2} E' D^{-1/2} with E' = (E + E^T) / 2 and degrees taken
// from E'. Do-probabilities are asymmetric, so symmetrizing first is the
// minimal repair that makes the normalized matrix symmetric. Zero-degree rows
// and columns are zeroed and reported; those concepts ride the residual path
// only.
Matrix normalize_adjacency(const Matrix& e,
                           std::vector<std::string>* warnings = nullptr);

// Residual graph convolution: H^{(l+1)} = leaky_relu(A H^{(l)} W^{(l)}) + H^{(0)}.
// Zero layers returns h0 unchanged. No bias terms.
Tensor gcn_forward(Tape& tape, const Tensor& h0, const Tensor& a_tilde,
                   const std::vector<Tensor>& layer_weights);

}  // namespace dcin::knowledge
