#pragma once

#include "mmsa/error.hpp"
#include "mmsa/parallel.hpp"
#include "mmsa/problem.hpp"
#include "mmsa/control.hpp"
#include "mmsa/sde.hpp"
#include "mmsa/bsde.hpp"
#include "mmsa/msa.hpp"
#include "mmsa/oracle.hpp"
