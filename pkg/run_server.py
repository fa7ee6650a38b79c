#!/usr/bin/env python
"""
Run the parameterization service with the repository root on the path.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

if __name__ == "__main__":
    import uvicorn
    uvicorn.run("squaremap.app:app", host="127.0.0.1", port=8080, reload=True)
