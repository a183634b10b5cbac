#ifndef HMX_HMX_HPP
#define HMX_HMX_HPP

#include "errors.hpp"
#include "parallel.hpp"
#include "geometry.hpp"
#include "clustering.hpp"
#include "lowrank.hpp"
#include "linear_map.hpp"
#include "compressors.hpp"
#include "hmatrix.hpp"
#include "hmatrix_io.hpp"
#include "sumexpr.hpp"
#include "multiply.hpp"
#include "bench.hpp"

#endif // HMX_HMX_HPP
