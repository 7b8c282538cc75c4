from setuptools import find_packages, setup


DESCRIPTION = 'Improved bag-of-visual-words image classification for Django'
LONG_DESCRIPTION = None
try:
    with open('README.rst', encoding='utf-8') as handle:
        LONG_DESCRIPTION = handle.read()
except OSError:
    pass


setup(name='django-visualwords',
      version='1.0',
      packages=find_packages(include=['visualwords', 'visualwords.*']),
      python_requires='>=3.8',
      install_requires=[
          'Django>=4.2',
          'numpy',
          'scipy',
          'Pillow',
          'joblib',
          'matplotlib',
          'tomli; python_version < "3.11"',
      ],
      entry_points={
          'console_scripts': ['vv = visualwords.boot:main'],
      },
      description=DESCRIPTION,
      long_description=LONG_DESCRIPTION,
      platforms=['any'],
      classifiers=[
          'Development Status :: 4 - Beta',
          'Environment :: Console',
          'Framework :: Django',
          'Intended Audience :: Science/Research',
          'Operating System :: OS Independent',
          'Programming Language :: Python',
          'Topic :: Scientific/Engineering :: Image Recognition',
          'License :: OSI Approved :: BSD License',
        ],
)
