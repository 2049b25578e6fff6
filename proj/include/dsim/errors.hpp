// Copyright 2026 The dsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace dsim {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(Eigen::Index expected, Eigen::Index got)
      : Error("dimension mismatch: expected " + std::to_string(expected) +
              ", got " + std::to_string(got)) {}
};

/// The kernel sum at a query point fell below the configured floor.
class UnderflowError : public Error {
 public:
  explicit UnderflowError(double kernel_sum)
      : Error("kernel sum underflow (" + std::to_string(kernel_sum) +
              "): point is too far from every sample"),
        kernel_sum(kernel_sum) {}
  double kernel_sum;
};

/// Iteration budget exhausted; carries the last iterate.
class NonConvergence : public Error {
 public:
  NonConvergence(int iterations, Eigen::VectorXd last)
      : Error("no convergence after " + std::to_string(iterations) +
              " iterations"),
        iterations(iterations),
        last(std::move(last)) {}
  int iterations;
  Eigen::VectorXd last;
};

/// |P0| is too small relative to the other gradient components.
class DegenerateCenter : public Error {
 public:
  using Error::Error;
};

/// |grad U|^2 and P0^2 coincide, so the two eigenspaces merge.
class DegenerateSpectrum : public Error {
 public:
  using Error::Error;
};

/// Gram-Schmidt produced fewer than the required number of vectors.
class RankDeficient : public Error {
 public:
  RankDeficient(int got, int needed)
      : Error("rank deficient: " + std::to_string(got) + " of " +
              std::to_string(needed) + " directions"),
        got(got),
        needed(needed) {}
  int got;
  int needed;
};

class StepCollapse : public Error {
 public:
  using Error::Error;
};

class StationaryStart : public Error {
 public:
  using Error::Error;
};

class BadMagic : public Error {
 public:
  explicit BadMagic(unsigned magic)
      : Error("bad IDX magic number " + std::to_string(magic)), magic(magic) {}
  unsigned magic;
};

class TruncatedFile : public Error {
 public:
  using Error::Error;
};

/// Bad user input: invalid sizes, k out of range, malformed config.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace dsim
