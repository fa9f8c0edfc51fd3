import os
import sys

# Modules import each other by bare name, as they do when run from execution/
sys.path.insert(0, os.path.dirname(__file__))
