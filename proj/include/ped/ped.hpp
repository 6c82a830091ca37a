#ifndef PED_PED_HPP
#define PED_PED_HPP

#include "ped/errors.hpp"
#include "ped/numkernel.hpp"
#include "ped/random.hpp"
#include "ped/csv.hpp"
#include "ped/expfam.hpp"
#include "ped/canonical.hpp"
#include "ped/fpsolve.hpp"
#include "ped/kinksolve.hpp"
#include "ped/pedshallow.hpp"
#include "ped/peddeep.hpp"
#include "ped/train.hpp"
#include "ped/datagen.hpp"
#include "ped/evalharness.hpp"
#include "ped/serialize.hpp"
#include "ped/runconfig.hpp"

#endif // PED_PED_HPP
