#pragma once

#define GAZEDIFF_VERSION "0.1.0"
