#pragma once
// Umbrella header for the serfsim library: spin-exchange relaxation dynamics
// of coupled nuclear-electron spin systems, irreducible-tensor analysis of
// the resulting density matrices, eigenmode and driven-response machinery for
// the collision superoperator, synthetic probe signals, and deterministic
// decaying-cosine fitting.

#include "serfsim/half_int.hpp"
#include "serfsim/angular.hpp"
#include "serfsim/hilbert.hpp"
#include "serfsim/dynamics.hpp"
#include "serfsim/multipole.hpp"
#include "serfsim/superop.hpp"
#include "serfsim/observables.hpp"
#include "serfsim/fitting.hpp"
#include "serfsim/csv.hpp"
